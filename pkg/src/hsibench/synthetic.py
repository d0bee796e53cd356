"""Synthetic hyperspectral cubes for desk-scale runs.

Each class gets a smooth spectral signature (a sum of three Gaussian bumps
over normalized wavelength position) with a class-specific primary bump, so
signatures stay separable, plus i.i.d. Gaussian pixel noise. Labeled regions
are contiguous Voronoi blobs. Everything is keyed by counter-based
generators, so identical (spec, seed) inputs produce bitwise-identical
outputs on any platform.

The signature seed is separate from the placement/noise seed: two datasets
generated on different wavelength grids but with the same signature seed
share their class spectra, which is what cross-camera transfer experiments
rely on.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .cube import (
    HyperspectralCube,
    LabelMask,
    ValidationError,
    WavelengthGrid,
    linear_grid,
)
from .ingest import Recording

SIGNATURE_COMPONENTS = 3
_BASELINE = 1.0


def keyed_rng(*parts) -> np.random.Generator:
    """Philox generator keyed by a stable hash of the given parts."""
    digest = hashlib.sha256("/".join(str(p) for p in parts).encode()).digest()
    key = np.frombuffer(digest[:16], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True)
class SyntheticSpec:
    x: int
    y: int
    bands: int
    class_count: int
    spectral_signature_seed: int = 0
    noise_sigma: float = 0.05
    task_kind: str = "patchwise"
    patch_size: Optional[int] = None

    def __post_init__(self):
        if self.class_count < 2:
            raise ValidationError("synthetic cubes need at least 2 classes")
        if min(self.x, self.y, self.bands) < 1:
            raise ValidationError("dimensions must be positive")
        if self.noise_sigma < 0:
            raise ValidationError("noise sigma must be non-negative")
        if self.task_kind == "patchwise" and self.patch_size is not None:
            if min(self.x, self.y) < self.patch_size:
                raise ValidationError("spatial dimensions must cover the patch size")


def class_signatures(spec: SyntheticSpec, grid: WavelengthGrid) -> np.ndarray:
    """(class_count, bands) signature matrix evaluated on the grid.

    Signatures are functions of normalized wavelength position, so the same
    signature seed yields consistent spectra across grids. Pairwise centroid
    separation is kept above 5x the noise sigma; if the random draw lands
    closer, the contrast around the baseline is scaled up.
    """
    lo, hi = grid.range_nm
    span = (hi - lo) or 1.0
    t = (grid.as_array - lo) / span
    sigs = np.zeros((spec.class_count, len(grid)))
    for c in range(spec.class_count):
        rng = keyed_rng("signature", spec.spectral_signature_seed, c)
        centers = rng.uniform(0.0, 1.0, size=SIGNATURE_COMPONENTS)
        centers[0] = (c + 0.5) / spec.class_count  # class-specific primary bump
        widths = rng.uniform(0.05, 0.2, size=SIGNATURE_COMPONENTS)
        amps = rng.uniform(0.5, 1.5, size=SIGNATURE_COMPONENTS)
        amps[0] = rng.uniform(1.0, 1.5)
        bumps = amps[:, None] * np.exp(-((t[None, :] - centers[:, None]) ** 2)
                                       / (2 * widths[:, None] ** 2))
        sigs[c] = _BASELINE + bumps.sum(axis=0)
    if spec.class_count > 1 and spec.noise_sigma > 0:
        dmin = min(
            float(np.linalg.norm(sigs[a] - sigs[b]))
            for a in range(spec.class_count)
            for b in range(a + 1, spec.class_count)
        )
        required = 5.0 * spec.noise_sigma
        if dmin <= required:
            scale = 1.01 * required / max(dmin, 1e-12)
            sigs = _BASELINE + (sigs - _BASELINE) * scale
    return sigs


def _voronoi_labels(spec: SyntheticSpec, rng: np.random.Generator) -> np.ndarray:
    cells_per_class = 2 if spec.x * spec.y >= 4 * spec.class_count else 1
    n_seeds = cells_per_class * spec.class_count
    flat = rng.choice(spec.x * spec.y, size=n_seeds, replace=False)
    seeds = np.stack([flat // spec.y, flat % spec.y], axis=1)
    seed_class = np.arange(n_seeds) % spec.class_count
    xs, ys = np.meshgrid(np.arange(spec.x), np.arange(spec.y), indexing="ij")
    d2 = (xs[..., None] - seeds[:, 0]) ** 2 + (ys[..., None] - seeds[:, 1]) ** 2
    return seed_class[np.argmin(d2, axis=2)].astype(np.int64)


def generate_synthetic(
    spec: SyntheticSpec,
    seed: int,
    grid: Optional[WavelengthGrid] = None,
    class_names: Optional[Sequence[str]] = None,
) -> Tuple[HyperspectralCube, LabelMask, WavelengthGrid]:
    """One fully-labeled synthetic scene: cube, per-pixel labels and grid."""
    if grid is None:
        grid = linear_grid(400.0, 1000.0, spec.bands, "synthetic")
    elif len(grid) != spec.bands:
        raise ValidationError(f"grid has {len(grid)} bands, spec declares {spec.bands}")
    sigs = class_signatures(spec, grid)
    labels = _voronoi_labels(spec, keyed_rng("layout", seed))
    data = sigs[labels]
    if spec.noise_sigma > 0:
        noise = keyed_rng("noise", seed).normal(0.0, spec.noise_sigma, size=data.shape)
        data = data + noise
    data = np.clip(data, 0.0, None)
    names = tuple(class_names) if class_names else tuple(
        f"class_{i}" for i in range(spec.class_count)
    )
    mask = LabelMask(labels, names)
    return HyperspectralCube(data, grid), mask, grid


def generate_recording(
    spec: SyntheticSpec,
    seed: int,
    record_id: str,
    class_id: int,
    grid: Optional[WavelengthGrid] = None,
    with_mask: bool = False,
) -> Recording:
    """One objectwise recording: a centered blob of the class signature on a
    dim background, optionally with a segmentation mask (blob labeled,
    background ignored)."""
    if grid is None:
        grid = linear_grid(400.0, 1000.0, spec.bands, "synthetic")
    sigs = class_signatures(spec, grid)
    rng = keyed_rng("recording", seed, record_id)
    xs, ys = np.meshgrid(np.arange(spec.x), np.arange(spec.y), indexing="ij")
    cx = spec.x / 2 + rng.uniform(-spec.x / 8, spec.x / 8)
    cy = spec.y / 2 + rng.uniform(-spec.y / 8, spec.y / 8)
    radius = min(spec.x, spec.y) * rng.uniform(0.28, 0.38)
    blob = ((xs - cx) ** 2 + (ys - cy) ** 2) <= radius**2
    data = np.full((spec.x, spec.y, spec.bands), 0.25 * _BASELINE)
    data[blob] = sigs[class_id]
    if spec.noise_sigma > 0:
        data = data + rng.normal(0.0, spec.noise_sigma, size=data.shape)
    data = np.clip(data, 0.0, None)
    mask_labels = None
    if with_mask:
        mask_labels = np.where(blob, class_id, -1).astype(np.int64)
    return Recording(record_id, HyperspectralCube(data, grid), class_id, mask_labels)


def recordings_for_split(
    spec: SyntheticSpec,
    seed: int,
    fixed_split: dict,
    grid: Optional[WavelengthGrid] = None,
    with_masks: bool = False,
) -> List[Recording]:
    """Recordings for every id in a fixed split listing.

    Classes are assigned round-robin within each portion so that train, val
    and test each cover every class whenever the portion is large enough.
    """
    recordings = []
    for tag in ("train", "val", "test"):
        for i, record_id in enumerate(fixed_split.get(tag, ())):
            class_id = i % spec.class_count
            recordings.append(
                generate_recording(spec, seed, record_id, class_id, grid, with_masks)
            )
    return recordings
