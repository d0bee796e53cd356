"""Deterministic, class-balanced train/validation/test assignment.

The remote-sensing scenes have no published membership lists, only a train
ratio, so the benchmark defines them: within each class, pixels are shuffled
by a counter-based generator keyed on (seed, scene, class index), the first
floor(r * n_c) pixels become train+validation and the rest test, and a
quarter of the train portion (floored, per class) is held out for
validation. Ratios are applied with exact rational arithmetic so that a
ratio written as 0.3 means exactly 3/10 regardless of float rounding.

Fruit and debris configurations ship fixed membership lists in the manifest
and are loaded as-is.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .cube import LabelMask, ValidationError
from .registry import DatasetManifest
from .synthetic import keyed_rng

SPLIT_TAGS = ("train", "val", "test")
DEFAULT_VAL_FRACTION = 0.25


def _exact_fraction(value: float) -> Fraction:
    # repr() of a float is its shortest decimal form, so ratios written as
    # 0.3 stay 3/10 instead of the binary approximation.
    return Fraction(repr(float(value)))


def allocate_counts(n_c: int, train_ratio: float, val_fraction: float) -> Tuple[int, int, int]:
    """Per-class (train, val, test) counts under the floor rule."""
    r = _exact_fraction(train_ratio)
    vf = _exact_fraction(val_fraction)
    n_tv = int(r * n_c)
    n_val = int(vf * n_tv)
    return n_tv - n_val, n_val, n_c - n_tv


def split_sizes_for_counts(class_counts: Sequence[int], train_ratio: float,
                           val_fraction: float = DEFAULT_VAL_FRACTION) -> Tuple[int, int, int]:
    """Total split sizes implied by per-class labeled-pixel counts."""
    totals = [0, 0, 0]
    for n_c in class_counts:
        for i, v in enumerate(allocate_counts(n_c, train_ratio, val_fraction)):
            totals[i] += v
    return tuple(totals)


@dataclass(frozen=True)
class SplitSpec:
    train_ratio: float
    val_fraction: float = DEFAULT_VAL_FRACTION
    seed: int = 0

    def __post_init__(self):
        if not (0 < self.train_ratio < 1):
            raise ValidationError("train ratio must lie in (0, 1)")
        if not (0 <= self.val_fraction < 1):
            raise ValidationError("val fraction must lie in [0, 1)")


@dataclass(frozen=True)
class ClassSplit:
    """One class's membership; tv_order is train+val in permutation order."""

    train: Tuple
    val: Tuple
    test: Tuple

    @property
    def tv_order(self) -> Tuple:
        return self.train + self.val

    @property
    def total(self) -> int:
        return len(self.train) + len(self.val) + len(self.test)


@dataclass(frozen=True)
class SplitAssignment:
    """Disjoint train/val/test membership, per class for pixel splits.

    ``kind`` is "pixel" (units are (x, y) coordinates) or "record" (units are
    recording ids). ``covers_all`` is False for assignments produced by
    train-ratio reduction, which drop pixels rather than growing the test
    set.
    """

    kind: str
    per_class: Tuple[Tuple[int, ClassSplit], ...]
    val_fraction: float = DEFAULT_VAL_FRACTION
    covers_all: bool = True

    def __post_init__(self):
        seen = set()
        for _, cs in self.per_class:
            for part in (cs.train, cs.val, cs.test):
                for unit in part:
                    if unit in seen:
                        raise ValidationError(f"split member appears twice: {unit}")
                    seen.add(unit)

    def class_split(self, class_id: int) -> ClassSplit:
        return dict(self.per_class)[class_id]

    @property
    def classes(self) -> Tuple[int, ...]:
        return tuple(c for c, _ in self.per_class)

    def members(self, tag: str) -> Tuple:
        if tag not in SPLIT_TAGS:
            raise ValidationError(f"unknown split tag {tag!r}")
        out: List = []
        for _, cs in self.per_class:
            out.extend(getattr(cs, tag))
        return tuple(out)

    @property
    def train(self) -> Tuple:
        return self.members("train")

    @property
    def val(self) -> Tuple:
        return self.members("val")

    @property
    def test(self) -> Tuple:
        return self.members("test")

    def sizes(self) -> Tuple[int, int, int]:
        return len(self.train), len(self.val), len(self.test)


def assign_hrss_split(mask: LabelMask, spec: SplitSpec, scene_id: str = "") -> SplitAssignment:
    """Deterministic ratio-based split of a labeled scene.

    The per-class shuffle is keyed on (seed, scene, class index) only, so
    assignments at different ratios share their permutations: train+val at a
    smaller ratio is always a subset of train+val at a larger one.
    """
    per_class = []
    any_tv = False
    for class_id in range(mask.class_count):
        coords = mask.labeled_coords(class_id)
        n_c = len(coords)
        if n_c == 0:
            raise ValidationError(
                f"class {mask.class_catalog[class_id]} has no labeled pixels"
            )
        rng = keyed_rng("hrss-split", spec.seed, scene_id, class_id)
        perm = rng.permutation(n_c)
        ordered = [tuple(int(v) for v in coords[i]) for i in perm]
        n_train, n_val, _ = allocate_counts(n_c, spec.train_ratio, spec.val_fraction)
        n_tv = n_train + n_val
        any_tv = any_tv or n_tv > 0
        per_class.append(
            (class_id, ClassSplit(
                train=tuple(ordered[:n_train]),
                val=tuple(ordered[n_train:n_tv]),
                test=tuple(ordered[n_tv:]),
            ))
        )
    if not any_tv:
        raise ValidationError("empty training set: train ratio too small for every class")
    return SplitAssignment("pixel", tuple(per_class), spec.val_fraction)


def load_fixed_split(config, manifest: DatasetManifest) -> SplitAssignment:
    """Manifest-defined membership lists for fruit/debris configurations.

    Record classes are not known until the data is loaded, so the assignment
    carries a single bucket; overlap validation happened when the manifest
    entry was built, emptiness is checked here.
    """
    entry = manifest.entry(config)
    if entry.fixed_split is None:
        raise ValidationError(f"{entry.config.key} uses a split rule, not fixed membership")
    fixed = entry.fixed_split
    for tag in ("train", "test"):
        if not fixed.get(tag):
            raise ValidationError(f"{entry.config.key}: fixed split has an empty {tag} set")
    bucket = ClassSplit(
        train=tuple(fixed.get("train", ())),
        val=tuple(fixed.get("val", ())),
        test=tuple(fixed.get("test", ())),
    )
    return SplitAssignment("record", ((-1, bucket),))


def reduce_train_ratio(assignment: SplitAssignment, target_r: float, original_r: float,
                       seed: int = 0) -> SplitAssignment:
    """Shrink train+val to a smaller ratio; the test set never grows.

    Subsampling takes a prefix of the stored per-class permutation order and
    re-applies the floor rule, which makes the result identical in
    membership to a direct assignment at the target ratio. Pixels dropped
    from train+val are left unassigned.
    """
    if assignment.kind != "pixel":
        raise ValidationError("train-ratio reduction applies to pixel splits")
    if target_r > original_r:
        raise ValidationError(
            f"target ratio {target_r} exceeds original ratio {original_r}"
        )
    if target_r == original_r:
        return assignment
    per_class = []
    any_tv = False
    for class_id, cs in assignment.per_class:
        order = cs.tv_order
        n_c = cs.total
        n_train, n_val, _ = allocate_counts(n_c, target_r, assignment.val_fraction)
        n_tv = n_train + n_val
        if n_tv > len(order):
            raise ValidationError("stored permutation prefix too short for target ratio")
        any_tv = any_tv or n_tv > 0
        per_class.append(
            (class_id, ClassSplit(
                train=order[:n_train],
                val=order[n_train:n_tv],
                test=cs.test,
            ))
        )
    if not any_tv:
        raise ValidationError("empty training set: target ratio too small for every class")
    return SplitAssignment("pixel", tuple(per_class), assignment.val_fraction,
                           covers_all=False)


# -- plain-text export/import ------------------------------------------------


def export_split(assignment: SplitAssignment, fh) -> int:
    """Write one line per unit; returns the number of lines written.

    Pixel splits use ``class_id x y tag``, record splits ``record_id tag``.
    Line order preserves the stored permutation order, so a round trip is
    lossless including the order reduction relies on.
    """
    fh.write(f"# hsibench split v1 kind={assignment.kind} "
             f"val_fraction={assignment.val_fraction:g} "
             f"covers_all={int(assignment.covers_all)}\n")
    lines = 0
    for class_id, cs in assignment.per_class:
        for tag in SPLIT_TAGS:
            for unit in getattr(cs, tag):
                if assignment.kind == "pixel":
                    fh.write(f"{class_id} {unit[0]} {unit[1]} {tag}\n")
                else:
                    fh.write(f"{unit} {tag}\n")
                lines += 1
    return lines


def import_split(fh) -> SplitAssignment:
    header = fh.readline().strip()
    if not header.startswith("# hsibench split v1"):
        raise ValidationError("not a split export (missing header)")
    meta = dict(part.split("=", 1) for part in header.split()[4:])
    kind = meta.get("kind", "pixel")
    val_fraction = float(meta.get("val_fraction", DEFAULT_VAL_FRACTION))
    covers_all = bool(int(meta.get("covers_all", 1)))
    buckets: Dict[int, Dict[str, List]] = {}
    for lineno, line in enumerate(fh, 2):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if kind == "pixel":
            if len(parts) != 4:
                raise ValidationError(f"line {lineno}: expected 'class x y tag'")
            class_id, x, y, tag = int(parts[0]), int(parts[1]), int(parts[2]), parts[3]
            unit = (x, y)
        else:
            if len(parts) != 2:
                raise ValidationError(f"line {lineno}: expected 'record_id tag'")
            class_id, unit, tag = -1, parts[0], parts[1]
        if tag not in SPLIT_TAGS:
            raise ValidationError(f"line {lineno}: unknown split tag {tag!r}")
        buckets.setdefault(class_id, {t: [] for t in SPLIT_TAGS})[tag].append(unit)
    per_class = tuple(
        (class_id, ClassSplit(tuple(b["train"]), tuple(b["val"]), tuple(b["test"])))
        for class_id, b in sorted(buckets.items())
    )
    return SplitAssignment(kind, per_class, val_fraction, covers_all)
