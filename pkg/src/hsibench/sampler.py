"""Turning split assignments into model-ready samples.

Patchwise tasks take square patches centered on labeled pixels
(mirror-padded at scene borders); the training stride ("dilation") thins the
patch centers per class while testing always uses every labeled pixel.
Objectwise tasks resize whole recordings to a fixed spatial size. Training
batches are class-balanced by inverse-frequency sampling, and pretraining
mixes several configurations per batch with near-equal quotas.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .cube import DataConfig, HyperspectralCube, LabelMask, ValidationError
from .ingest import Recording
from .splits import SplitAssignment
from .synthetic import keyed_rng

OBJECTWISE_SIZE = 128


@dataclass(frozen=True)
class PatchSpec:
    size: int = 63
    train_stride: int = 1
    test_stride: int = 1
    padding: str = "mirror"

    def __post_init__(self):
        if self.size % 2 == 0 or self.size < 1:
            raise ValidationError("patch size must be a positive odd number")
        if self.train_stride < 1 or self.test_stride < 1:
            raise ValidationError("strides must be >= 1")
        if self.padding != "mirror":
            raise ValidationError(f"unsupported padding {self.padding!r}")


@dataclass(frozen=True)
class AugmentSpec:
    p_flip: float = 0.5
    p_rotate: float = 0.5
    p_cut: float = 0.5
    p_crop: float = 0.1
    seed: int = 0

    def __post_init__(self):
        for name in ("p_flip", "p_rotate", "p_cut", "p_crop"):
            p = getattr(self, name)
            if not (0.0 <= p <= 1.0):
                raise ValidationError(f"{name} must lie in [0, 1]")


@dataclass
class Sample:
    """One model input: (x, y, band) tensor, class label and provenance."""

    tensor: np.ndarray
    label: int
    config: Optional[DataConfig] = None
    uid: Optional[Tuple] = None


def mirror_pad(data: np.ndarray, half: int) -> np.ndarray:
    x, y = data.shape[:2]
    if half > min(x, y) - 1:
        raise ValidationError(
            f"patch size {2 * half + 1} exceeds twice the smallest spatial dimension"
        )
    if half == 0:
        return data
    return np.pad(data, ((half, half), (half, half), (0, 0)), mode="reflect")


def _selected_coords(labels: np.ndarray, assignment: SplitAssignment, split_tag: str,
                     stride: int) -> List[Tuple[Tuple[int, int], int]]:
    """(coord, class) pairs: every stride-th member per class in row-major
    scan order."""
    selected = []
    for class_id, cs in assignment.per_class:
        coords = sorted(getattr(cs, split_tag))
        for coord in coords[::stride]:
            selected.append((coord, int(labels[coord[0], coord[1]])))
    return selected


class PatchSource:
    """Lazy patch extraction over one (preprocessed) scene.

    Keeps only the padded scene and the selected centers; patches are sliced
    on demand, so large scenes never materialize all their patches at once.
    """

    def __init__(self, data: np.ndarray, labels: np.ndarray, assignment: SplitAssignment,
                 split_tag: str, spec: PatchSpec, config: Optional[DataConfig] = None,
                 uid_prefix: Tuple = ()):
        if spec.size > 2 * min(data.shape[:2]):
            raise ValidationError(
                f"patch size {spec.size} exceeds twice the smallest spatial dimension"
            )
        stride = spec.train_stride if split_tag in ("train", "val") else spec.test_stride
        self.spec = spec
        self.config = config
        self._half = spec.size // 2
        self._padded = mirror_pad(data, self._half)
        self._selected = _selected_coords(labels, assignment, split_tag, stride)
        self._uid_prefix = uid_prefix

    def __len__(self):
        return len(self._selected)

    @property
    def labels(self) -> np.ndarray:
        return np.array([c for _, c in self._selected], dtype=np.int64)

    def get(self, i: int) -> Sample:
        (x, y), label = self._selected[i]
        s = self.spec.size
        patch = self._padded[x : x + s, y : y + s, :]
        return Sample(np.ascontiguousarray(patch), label, self.config,
                      uid=self._uid_prefix + (x, y))

    def __iter__(self) -> Iterator[Sample]:
        return (self.get(i) for i in range(len(self)))


def extract_patches(cube: HyperspectralCube, mask: LabelMask, assignment: SplitAssignment,
                    split_tag: str, spec: PatchSpec,
                    config: Optional[DataConfig] = None) -> Iterator[Sample]:
    """Stream of patches, one per selected labeled pixel of the split."""
    source = PatchSource(np.asarray(cube.data), mask.labels, assignment, split_tag,
                         spec, config)
    return iter(source)


def bilinear_resize(data: np.ndarray, out_x: int, out_y: int) -> np.ndarray:
    """Per-band bilinear interpolation with half-pixel sample centers.

    Resizing to the input size reproduces the input exactly.
    """
    in_x, in_y = data.shape[:2]
    if out_x < 1 or out_y < 1:
        raise ValidationError("target size must be positive")
    xs = (np.arange(out_x) + 0.5) * (in_x / out_x) - 0.5
    ys = (np.arange(out_y) + 0.5) * (in_y / out_y) - 0.5
    x0 = np.clip(np.floor(xs).astype(int), 0, in_x - 1)
    y0 = np.clip(np.floor(ys).astype(int), 0, in_y - 1)
    x1 = np.minimum(x0 + 1, in_x - 1)
    y1 = np.minimum(y0 + 1, in_y - 1)
    tx = np.clip(xs - x0, 0.0, 1.0)[:, None, None]
    ty = np.clip(ys - y0, 0.0, 1.0)[None, :, None]
    top = data[x0][:, y0] * (1 - ty) + data[x0][:, y1] * ty
    bot = data[x1][:, y0] * (1 - ty) + data[x1][:, y1] * ty
    return top * (1 - tx) + bot * tx


def objectwise_view(recording: Recording, target: int = OBJECTWISE_SIZE,
                    config: Optional[DataConfig] = None) -> Sample:
    """Whole recording resized to target x target; bands untouched."""
    data = np.asarray(recording.cube.data, dtype=np.float64)
    if data.shape[0] < 1 or data.shape[1] < 1:
        raise ValidationError("empty recording")
    resized = bilinear_resize(data, target, target)
    return Sample(resized, recording.label, config, uid=(recording.record_id,))


# -- augmentation ------------------------------------------------------------


def flip_patch(tensor: np.ndarray, axis: int) -> np.ndarray:
    return np.flip(tensor, axis=axis)


def rotate_patch(tensor: np.ndarray, k: int) -> np.ndarray:
    if tensor.shape[0] != tensor.shape[1] and k % 2 == 1:
        raise ValidationError("quarter rotations require square patches")
    return np.rot90(tensor, k=k, axes=(0, 1))


def cut_patch(tensor: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Zero a random rectangle covering at most a quarter of the area."""
    x, y = tensor.shape[:2]
    w = int(rng.integers(1, max(x // 2, 1) + 1))
    h = int(rng.integers(1, max(y // 2, 1) + 1))
    x0 = int(rng.integers(0, x - w + 1))
    y0 = int(rng.integers(0, y - h + 1))
    out = tensor.copy()
    out[x0 : x0 + w, y0 : y0 + h, :] = 0.0
    return out


def crop_resize_patch(tensor: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Random window of at least 75% linear size, resized back."""
    x, y = tensor.shape[:2]
    frac = rng.uniform(0.75, 1.0)
    cx = max(1, int(round(frac * x)))
    cy = max(1, int(round(frac * y)))
    x0 = int(rng.integers(0, x - cx + 1))
    y0 = int(rng.integers(0, y - cy + 1))
    window = tensor[x0 : x0 + cx, y0 : y0 + cy, :]
    return bilinear_resize(window, x, y)


def augment(sample: Sample, spec: AugmentSpec, rng: Optional[np.random.Generator] = None) -> Sample:
    """Randomly flip / rotate / cut / crop a training sample.

    The label never changes, the tensor shape is preserved, and the result
    is fully determined by the generator state.
    """
    if rng is None:
        rng = keyed_rng("augment", spec.seed)
    tensor = sample.tensor
    if rng.random() < spec.p_flip:
        tensor = flip_patch(tensor, axis=int(rng.integers(0, 2)))
    if rng.random() < spec.p_rotate:
        tensor = rotate_patch(tensor, k=int(rng.integers(1, 4)))
    if rng.random() < spec.p_cut:
        tensor = cut_patch(np.ascontiguousarray(tensor), rng)
    if rng.random() < spec.p_crop:
        tensor = crop_resize_patch(np.ascontiguousarray(tensor), rng)
    return Sample(np.ascontiguousarray(tensor), sample.label, sample.config, sample.uid)


# -- batching ----------------------------------------------------------------


def balance_weights(labels: np.ndarray) -> np.ndarray:
    """Sampling weights inversely proportional to class frequency."""
    labels = np.asarray(labels)
    counts = np.bincount(labels)
    if np.any(counts[np.unique(labels)] == 0):
        raise ValidationError("empty class in sample set")
    w = 1.0 / counts[labels]
    return w / w.sum()


class SampleSet:
    """Indexable collection of samples with lazy access."""

    def __init__(self, get: Callable[[int], Sample], labels: np.ndarray,
                 config: Optional[DataConfig] = None):
        self._get = get
        self.labels = np.asarray(labels, dtype=np.int64)
        self.config = config

    @staticmethod
    def from_samples(samples: Sequence[Sample], config=None) -> "SampleSet":
        labels = np.array([s.label for s in samples], dtype=np.int64)
        return SampleSet(lambda i: samples[i], labels, config)

    @staticmethod
    def from_source(source: PatchSource) -> "SampleSet":
        return SampleSet(source.get, source.labels, source.config)

    def __len__(self):
        return len(self.labels)

    def get(self, i: int) -> Sample:
        return self._get(int(i))

    def __iter__(self) -> Iterator[Sample]:
        return (self.get(i) for i in range(len(self)))


def balanced_batches(samples: SampleSet, batch_size: int = 32,
                     rng: Optional[np.random.Generator] = None) -> Iterator[List[Sample]]:
    """One epoch of class-balanced batches (sampling with replacement)."""
    if len(samples) == 0:
        raise ValidationError("cannot batch an empty sample set")
    if rng is None:
        rng = keyed_rng("batches")
    weights = balance_weights(samples.labels)
    n_batches = int(np.ceil(len(samples) / batch_size))
    for _ in range(n_batches):
        idx = rng.choice(len(samples), size=batch_size, replace=True, p=weights)
        yield [samples.get(i) for i in idx]


def mixed_batch_quotas(n_streams: int, batch_size: int, batch_index: int) -> List[int]:
    """Per-stream sample counts for one mixed batch; remainder rotates."""
    if n_streams < 1:
        raise ValidationError("need at least one stream")
    if batch_size < n_streams:
        raise ValidationError(
            f"batch size {batch_size} cannot cover {n_streams} configurations"
        )
    base, rem = divmod(batch_size, n_streams)
    quotas = [base] * n_streams
    for j in range(rem):
        quotas[(batch_index + j) % n_streams] += 1
    return quotas


def mixed_batch_schedule(config_sets: Sequence[SampleSet], batch_size: int,
                         rng: Optional[np.random.Generator] = None) -> Iterator[List[Sample]]:
    """One epoch of mixed batches with near-equal per-configuration quotas.

    Every batch holds floor(batch_size/N) samples of each configuration plus
    a rotating remainder; the epoch covers the largest configuration once at
    its base quota.
    """
    n = len(config_sets)
    base = batch_size // n if n else 0
    if n < 1 or base < 1:
        mixed_batch_quotas(n, batch_size, 0)  # raises with the right message
    if rng is None:
        rng = keyed_rng("mixed-batches")
    weights = [balance_weights(s.labels) for s in config_sets]
    largest = max(len(s) for s in config_sets)
    n_batches = int(np.ceil(largest / base))
    for b in range(n_batches):
        quotas = mixed_batch_quotas(n, batch_size, b)
        batch: List[Sample] = []
        for s, w, q in zip(config_sets, weights, quotas):
            idx = rng.choice(len(s), size=q, replace=True, p=w)
            batch.extend(s.get(i) for i in idx)
        yield batch
