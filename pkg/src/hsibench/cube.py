"""Core domain types: wavelength grids, hyperspectral cubes, label masks and
benchmark configurations.

A hyperspectral cube is a rank-3 array indexed (x, y, band) together with the
band-center wavelengths of the camera that recorded it. All types here are
immutable after construction and validate their invariants eagerly, so that
everything downstream (splits, samplers, models) can rely on them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

DATASET_IDS = ("hrss", "fruit", "debris")
TASK_KINDS = ("patchwise", "objectwise")
LABEL_TARGETS = ("ripeness", "firmness", "sweetness")
PREPROCESS_MODES = ("raw", "pca", "spectral_mean", "center_pixel")


class ValidationError(ValueError):
    """Raised when a domain invariant is violated at construction time."""


@dataclass(frozen=True)
class WavelengthGrid:
    """Ordered band-center wavelengths (nm) of one recording.

    ``camera_id`` refers into the camera registry; the wavelengths must lie
    inside that camera's nominal range (checked by the registry, which knows
    the ranges).
    """

    wavelengths_nm: Tuple[float, ...]
    camera_id: str

    def __post_init__(self):
        object.__setattr__(self, "wavelengths_nm", tuple(float(w) for w in self.wavelengths_nm))
        if len(self.wavelengths_nm) < 1:
            raise ValidationError("wavelength grid must contain at least one band")
        diffs = np.diff(self.wavelengths_nm)
        if len(diffs) and not np.all(diffs > 0):
            raise ValidationError("wavelengths must be strictly increasing")

    def __len__(self):
        return len(self.wavelengths_nm)

    @property
    def as_array(self) -> np.ndarray:
        return np.asarray(self.wavelengths_nm, dtype=np.float64)

    @property
    def range_nm(self) -> Tuple[float, float]:
        return self.wavelengths_nm[0], self.wavelengths_nm[-1]


def linear_grid(lo_nm: float, hi_nm: float, bands: int, camera_id: str) -> WavelengthGrid:
    """Evenly spaced band centers between the range endpoints (inclusive)."""
    if bands == 1:
        centers = [0.5 * (lo_nm + hi_nm)]
    else:
        centers = np.linspace(lo_nm, hi_nm, bands).tolist()
    return WavelengthGrid(tuple(centers), camera_id)


@dataclass(frozen=True)
class HyperspectralCube:
    """One recording: (x, y, band) intensities plus its wavelength grid."""

    data: np.ndarray
    grid: WavelengthGrid

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3:
            raise ValidationError(f"cube data must be rank 3, got shape {data.shape}")
        if data.shape[2] != len(self.grid):
            raise ValidationError(
                f"cube has {data.shape[2]} bands but grid lists {len(self.grid)}"
            )
        if not np.all(np.isfinite(data)):
            raise ValidationError("cube contains NaN or Inf values")
        if np.any(data < 0):
            raise ValidationError("cube intensities must be non-negative")
        data = data.astype(np.float32, copy=False)
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def shape(self) -> Tuple[int, int, int]:
        return self.data.shape

    @property
    def bands(self) -> int:
        return self.data.shape[2]

    def pixels(self) -> np.ndarray:
        """All spectra flattened to an (x*y, bands) matrix (row-major)."""
        return self.data.reshape(-1, self.bands)


@dataclass(frozen=True)
class LabelMask:
    """Per-pixel class map aligned with a cube's (x, y) plane.

    ``ignore_value`` marks unlabeled pixels; every other value indexes into
    ``class_catalog``.
    """

    labels: np.ndarray
    class_catalog: Tuple[str, ...]
    ignore_value: int = -1

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 2:
            raise ValidationError(f"label mask must be rank 2, got shape {labels.shape}")
        if not np.issubdtype(labels.dtype, np.integer):
            raise ValidationError("label mask must be integer-valued")
        labels = labels.astype(np.int64, copy=True)
        labeled = labels != self.ignore_value
        if labeled.any():
            vals = labels[labeled]
            if vals.min() < 0 or vals.max() >= len(self.class_catalog):
                raise ValidationError(
                    f"labels must lie in [0, {len(self.class_catalog)}), "
                    f"found range [{vals.min()}, {vals.max()}]"
                )
        present = set(np.unique(labels[labeled]).tolist()) if labeled.any() else set()
        missing = [c for c in range(len(self.class_catalog)) if c not in present]
        if missing:
            names = ", ".join(self.class_catalog[c] for c in missing)
            raise ValidationError(f"classes with no labeled pixel: {names}")
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "class_catalog", tuple(self.class_catalog))

    @property
    def class_count(self) -> int:
        return len(self.class_catalog)

    def labeled_coords(self, class_id: Optional[int] = None) -> np.ndarray:
        """(n, 2) array of labeled (x, y) coordinates in row-major scan order."""
        if class_id is None:
            mask = self.labels != self.ignore_value
        else:
            mask = self.labels == class_id
        return np.argwhere(mask)

    def class_counts(self) -> np.ndarray:
        """Number of labeled pixels per class."""
        labeled = self.labels[self.labels != self.ignore_value]
        return np.bincount(labeled, minlength=self.class_count)


@dataclass(frozen=True)
class DataConfig:
    """One benchmark configuration: the unit splits, heads and reports key on."""

    dataset_id: str
    scene_or_item: str
    camera_id: str
    task_kind: str
    label_target: Optional[str] = None
    train_ratio: Optional[float] = None

    def __post_init__(self):
        if self.dataset_id not in DATASET_IDS:
            raise ValidationError(f"unknown dataset id {self.dataset_id!r}")
        if self.task_kind not in TASK_KINDS:
            raise ValidationError(f"unknown task kind {self.task_kind!r}")
        for name in ("scene_or_item", "camera_id"):
            value = getattr(self, name)
            if not value or any(c in value for c in "/~ \t\n"):
                raise ValidationError(
                    f"{name} must be a non-empty identifier without '/', '~' or spaces"
                )
        if self.dataset_id == "hrss":
            if self.train_ratio is None:
                raise ValidationError("HRSS configurations require a train ratio")
            if not (0 < self.train_ratio <= 1):
                raise ValidationError("train ratio must lie in (0, 1]")
        elif self.train_ratio is not None:
            raise ValidationError("train ratio is only valid for HRSS configurations")
        if self.dataset_id == "fruit":
            if self.label_target not in LABEL_TARGETS:
                raise ValidationError(
                    f"fruit configurations require a label target from {LABEL_TARGETS}"
                )
        elif self.label_target is not None:
            raise ValidationError("label target is only valid for fruit configurations")

    @property
    def key(self) -> str:
        """Canonical identifier, e.g. ``hrss/indian_pines/aviris/patchwise/r0.05``."""
        parts = [self.dataset_id, self.scene_or_item, self.camera_id, self.task_kind]
        if self.label_target is not None:
            parts.append(self.label_target)
        if self.train_ratio is not None:
            parts.append(f"r{self.train_ratio:g}")
        return "/".join(parts)

    def sort_key(self):
        return (
            self.dataset_id,
            self.scene_or_item,
            self.camera_id,
            self.task_kind,
            self.label_target or "",
            self.train_ratio if self.train_ratio is not None else -1.0,
        )


def parse_config_key(key: str) -> DataConfig:
    """Inverse of :attr:`DataConfig.key`."""
    parts = key.split("/")
    if len(parts) < 4:
        raise ValidationError(f"malformed config key {key!r}")
    dataset_id, scene, camera, task = parts[:4]
    label_target = None
    train_ratio = None
    for extra in parts[4:]:
        if extra.startswith("r") and extra[1:].replace(".", "", 1).isdigit():
            train_ratio = float(extra[1:])
        elif extra in LABEL_TARGETS:
            label_target = extra
        else:
            raise ValidationError(f"unrecognized config key component {extra!r}")
    return DataConfig(dataset_id, scene, camera, task, label_target, train_ratio)


@dataclass(frozen=True)
class PreprocessSpec:
    """Input handling for one model: raw (standardized), pca, spectral mean
    or center pixel."""

    mode: str = "raw"
    components: Optional[int] = None

    def __post_init__(self):
        if self.mode not in PREPROCESS_MODES:
            raise ValidationError(f"unknown preprocess mode {self.mode!r}")
        if self.mode == "pca":
            if self.components is None or self.components < 1:
                raise ValidationError("pca mode requires a positive component count")
        elif self.components is not None:
            raise ValidationError("components is only valid for pca mode")

    def output_bands(self, input_bands: int) -> int:
        if self.mode == "pca":
            if self.components > input_bands:
                raise ValidationError(
                    f"pca components ({self.components}) exceed cube bands ({input_bands})"
                )
            return self.components
        if self.mode == "spectral_mean":
            return 1
        return input_bands
