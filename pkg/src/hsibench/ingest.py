"""Asset download with integrity checks and scene loading.

Two on-disk forms are supported: the community matrix-file distribution of
the remote-sensing scenes (loaded through scipy), and a simple documented
container (plain-text header plus flat binary) used for synthetic stand-ins
and exports. Downloads are cached, verified against SHA-256 where the
manifest provides a hash, and serialized per asset with a lock file.
"""

from __future__ import annotations

import hashlib
import logging
import shutil
import urllib.error
import urllib.parse
import urllib.request
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from filelock import FileLock

from .cube import HyperspectralCube, LabelMask, ValidationError, WavelengthGrid
from .registry import DatasetManifest, ManifestEntry, SCENES

log = logging.getLogger(__name__)

CONTAINER_FORMAT = "hsibench-cube-v1"


class FetchError(RuntimeError):
    """A remote asset could not be retrieved."""


class IntegrityError(RuntimeError):
    """An asset's content hash does not match the manifest."""


class LoadError(RuntimeError):
    """A scene file does not match its registry entry."""


def sha256_of(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _download(uri: str, target: Path):
    parsed = urllib.parse.urlparse(uri)
    if parsed.scheme == "file":
        src = Path(urllib.request.url2pathname(parsed.path))
        if not src.exists():
            raise FetchError(f"missing remote asset: {uri}")
        shutil.copyfile(src, target)
        return
    try:
        with urllib.request.urlopen(uri) as resp, open(target, "wb") as out:
            shutil.copyfileobj(resp, out)
    except (urllib.error.URLError, OSError) as err:
        raise FetchError(f"failed to fetch {uri}: {err}") from err


def fetch_assets(manifest: DatasetManifest, config, cache_dir) -> Dict[str, Path]:
    """Ensure the configuration's assets are cached and verified.

    Returns a mapping of asset kind to local path. Re-running is idempotent;
    a corrupted cached file is re-downloaded once and then rejected if the
    hash still disagrees.
    """
    try:
        entry = manifest.entry(config)
    except KeyError as err:
        raise KeyError(str(err)) from None
    cache_dir = Path(cache_dir)
    subdir = cache_dir / entry.config.dataset_id / entry.config.scene_or_item
    subdir.mkdir(parents=True, exist_ok=True)
    paths: Dict[str, Path] = {}
    for asset in entry.assets:
        target = subdir / asset.filename
        lock = FileLock(str(target) + ".lock")
        with lock:
            if target.exists():
                if asset.sha256 is None or sha256_of(target) == asset.sha256:
                    paths[asset.kind] = target
                    continue
                log.warning("cached %s fails verification, re-fetching", target.name)
                target.unlink()
            _download(asset.uri, target)
            if asset.sha256 is not None:
                got = sha256_of(target)
                if got != asset.sha256:
                    target.unlink()
                    raise IntegrityError(
                        f"{asset.uri}: sha256 mismatch (expected {asset.sha256}, got {got})"
                    )
            elif asset.sha256 is None:
                log.warning("no hash recorded for %s; skipping verification", asset.filename)
        paths[asset.kind] = target
    return paths


# -- container format -------------------------------------------------------


def write_scene_container(base_path, cube: HyperspectralCube, mask: Optional[LabelMask] = None,
                          class_names: Sequence[str] = ()) -> Path:
    """Write a scene as header + flat binary; returns the header path."""
    base = Path(base_path)
    header = base.with_suffix(".hsch")
    data_file = base.with_suffix(".bin")
    x, y, bands = cube.shape
    lines = [
        f"format: {CONTAINER_FORMAT}",
        "kind: scene",
        f"x: {x}",
        f"y: {y}",
        f"bands: {bands}",
        "dtype: float32",
        f"camera: {cube.grid.camera_id}",
        "wavelengths: " + " ".join(f"{w:.6g}" for w in cube.grid.wavelengths_nm),
        f"data_file: {data_file.name}",
    ]
    cube.data.astype("<f4").tofile(data_file)
    if mask is not None:
        labels_file = base.parent / (base.name + "_labels.bin")
        mask.labels.astype("<i4").tofile(labels_file)
        lines += [
            f"labels_file: {labels_file.name}",
            f"ignore_value: {mask.ignore_value}",
            "classes: " + " ".join(mask.class_catalog),
        ]
    elif class_names:
        lines.append("classes: " + " ".join(class_names))
    header.write_text("\n".join(lines) + "\n")
    return header


def write_recordings_container(base_path, cubes: Sequence[HyperspectralCube],
                               record_ids: Sequence[str], labels: Sequence[int],
                               class_names: Sequence[str],
                               masks: Optional[Sequence[np.ndarray]] = None) -> Path:
    """Write a stack of equally-shaped recordings with per-record labels."""
    base = Path(base_path)
    header = base.with_suffix(".hsch")
    data_file = base.with_suffix(".bin")
    if not cubes:
        raise ValidationError("recordings container needs at least one recording")
    shape = cubes[0].shape
    for c in cubes:
        if c.shape != shape:
            raise ValidationError("all recordings in one container must share a shape")
    stack = np.stack([c.data for c in cubes]).astype("<f4")
    stack.tofile(data_file)
    lines = [
        f"format: {CONTAINER_FORMAT}",
        "kind: recordings",
        f"records: {len(cubes)}",
        f"x: {shape[0]}",
        f"y: {shape[1]}",
        f"bands: {shape[2]}",
        "dtype: float32",
        f"camera: {cubes[0].grid.camera_id}",
        "wavelengths: " + " ".join(f"{w:.6g}" for w in cubes[0].grid.wavelengths_nm),
        f"data_file: {data_file.name}",
        "record_ids: " + " ".join(record_ids),
        "record_labels: " + " ".join(str(int(v)) for v in labels),
        "classes: " + " ".join(class_names),
    ]
    if masks is not None:
        masks_file = base.parent / (base.name + "_masks.bin")
        np.stack(masks).astype("<i4").tofile(masks_file)
        lines.append(f"masks_file: {masks_file.name}")
        lines.append("ignore_value: -1")
    header.write_text("\n".join(lines) + "\n")
    return header


def _parse_header(path: Path) -> dict:
    fields = {}
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if ":" not in line:
            raise LoadError(f"{path.name}:{lineno}: expected 'key: value'")
        key, value = line.split(":", 1)
        fields[key.strip()] = value.strip()
    if fields.get("format") != CONTAINER_FORMAT:
        raise LoadError(f"{path.name}: unknown container format {fields.get('format')!r}")
    return fields


@dataclass
class Recording:
    """One objectwise sample: a small cube, its label and (for the
    segmentation track) a per-pixel label array."""

    record_id: str
    cube: HyperspectralCube
    label: int
    mask_labels: Optional[np.ndarray] = None


@dataclass
class SceneData:
    """Loaded contents of one configuration."""

    grid: WavelengthGrid
    class_names: Tuple[str, ...]
    cube: Optional[HyperspectralCube] = None
    mask: Optional[LabelMask] = None
    recordings: Optional[List[Recording]] = None


def read_container(header_path) -> SceneData:
    header_path = Path(header_path)
    fields = _parse_header(header_path)
    x, y, bands = int(fields["x"]), int(fields["y"]), int(fields["bands"])
    wavelengths = tuple(float(v) for v in fields["wavelengths"].split())
    grid = WavelengthGrid(wavelengths, fields.get("camera", "unknown"))
    data_path = header_path.parent / fields["data_file"]
    raw = np.fromfile(data_path, dtype="<f4")
    classes = tuple(fields.get("classes", "").split())
    if fields.get("kind", "scene") == "scene":
        expected = x * y * bands
        if raw.size != expected:
            raise LoadError(f"{data_path.name}: expected {expected} values, found {raw.size}")
        cube = HyperspectralCube(raw.reshape(x, y, bands), grid)
        mask = None
        if "labels_file" in fields:
            labels = np.fromfile(header_path.parent / fields["labels_file"], dtype="<i4")
            mask = LabelMask(labels.reshape(x, y), classes, int(fields.get("ignore_value", -1)))
        return SceneData(grid=grid, class_names=classes, cube=cube, mask=mask)
    n = int(fields["records"])
    expected = n * x * y * bands
    if raw.size != expected:
        raise LoadError(f"{data_path.name}: expected {expected} values, found {raw.size}")
    stack = raw.reshape(n, x, y, bands)
    ids = fields["record_ids"].split()
    labels = [int(v) for v in fields["record_labels"].split()]
    masks = None
    if "masks_file" in fields:
        masks = np.fromfile(header_path.parent / fields["masks_file"], dtype="<i4")
        masks = masks.reshape(n, x, y)
    recordings = [
        Recording(
            record_id=ids[i],
            cube=HyperspectralCube(stack[i], grid),
            label=labels[i],
            mask_labels=masks[i].astype(np.int64) if masks is not None else None,
        )
        for i in range(n)
    ]
    return SceneData(grid=grid, class_names=classes, recordings=recordings)


# -- matrix-file adapter -----------------------------------------------------


def _load_mat_array(path: Path, key_hint: Optional[str]) -> np.ndarray:
    from scipy.io import loadmat

    mat = loadmat(path)
    if key_hint and key_hint in mat:
        return np.asarray(mat[key_hint])
    arrays = {k: v for k, v in mat.items() if not k.startswith("__")}
    if len(arrays) == 1:
        return np.asarray(next(iter(arrays.values())))
    raise LoadError(f"{path.name}: cannot identify data array (keys: {sorted(arrays)})")


def load_mat_scene(entry: ManifestEntry, data_path, gt_path) -> SceneData:
    """Adapter for the community matrix-file distribution of the
    remote-sensing scenes (ground truth uses 0 for unlabeled)."""
    scene = SCENES.get(entry.config.scene_or_item)
    data_key, gt_key = scene.mat_keys if scene else (None, None)
    data = _load_mat_array(Path(data_path), data_key).astype(np.float64)
    data = data - min(0.0, data.min())  # a few distributions carry small negative offsets
    gt = _load_mat_array(Path(gt_path), gt_key).astype(np.int64)
    grid = entry.grid()
    cube = HyperspectralCube(data, grid)
    mask = LabelMask(gt - 1, entry.class_names, ignore_value=-1)
    return SceneData(grid=grid, class_names=entry.class_names, cube=cube, mask=mask)


def load_scene(entry: ManifestEntry, paths: Dict[str, Path]) -> SceneData:
    """Load and validate one configuration's data against its registry entry."""
    scene_path = Path(paths["scene"])
    if scene_path.suffix == ".mat":
        data = load_mat_scene(entry, scene_path, paths["labels"])
    else:
        data = read_container(scene_path)
    if data.cube is not None:
        if data.cube.shape != tuple(entry.shape):
            raise LoadError(
                f"{entry.config.key}: cube shape {data.cube.shape} does not match "
                f"registry {tuple(entry.shape)}"
            )
        if data.mask is not None and len(data.mask.class_catalog) != entry.class_count:
            raise LoadError(
                f"{entry.config.key}: {len(data.mask.class_catalog)} classes in mask, "
                f"registry lists {entry.class_count}"
            )
    else:
        for rec in data.recordings:
            if rec.cube.shape != tuple(entry.shape):
                raise LoadError(
                    f"{entry.config.key}: recording {rec.record_id} shape "
                    f"{rec.cube.shape} does not match registry {tuple(entry.shape)}"
                )
        known = {r.record_id for r in data.recordings}
        declared = set()
        for part in entry.fixed_split.values():
            declared.update(part)
        missing = declared - known
        if missing:
            raise LoadError(
                f"{entry.config.key}: split references unknown recordings: "
                f"{sorted(missing)[:3]}"
            )
    return data
