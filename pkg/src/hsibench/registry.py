"""Dataset and camera registry plus the manifest format.

The registry enumerates every benchmark configuration with its expected
shape, class catalog and split definition. Remote-sensing scenes carry a
split *rule* (ratio-based, class-balanced); fruit and debris configurations
carry *fixed* membership lists. A manifest is the serializable form of the
registry and is also how synthetic desk-scale stand-ins declare themselves:
they reuse the real configuration axes with overridden shapes and assets.
"""

from __future__ import annotations

import hashlib
import io
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import yaml

from .cube import DataConfig, ValidationError, WavelengthGrid, linear_grid, parse_config_key

MANIFEST_VERSION = 1


@dataclass(frozen=True)
class CameraSpec:
    camera_id: str
    range_nm: Tuple[float, float]
    band_count: int
    application: str  # satellite | inline

    def __post_init__(self):
        lo, hi = self.range_nm
        if not lo < hi:
            raise ValidationError(f"camera {self.camera_id}: invalid range {self.range_nm}")
        if self.band_count <= 0:
            raise ValidationError(f"camera {self.camera_id}: band count must be positive")

    def nominal_grid(self, bands: Optional[int] = None) -> WavelengthGrid:
        lo, hi = self.range_nm
        return linear_grid(lo, hi, bands or self.band_count, self.camera_id)


CAMERAS: Dict[str, CameraSpec] = {
    c.camera_id: c
    for c in [
        CameraSpec("aviris", (400.0, 2500.0), 224, "satellite"),
        CameraSpec("rosis", (430.0, 860.0), 115, "satellite"),
        CameraSpec("corning_microhsi_410", (408.0, 901.0), 249, "inline"),
        CameraSpec("innospec_redeye", (920.0, 1730.0), 252, "inline"),
        CameraSpec("specim_fx10", (400.0, 1000.0), 224, "inline"),
    ]
}


# Water-absorption bands removed from the 220-band Indian Pines recording
# (1-based indices); the corrected scene keeps the remaining 200.
_INDIAN_PINES_REMOVED = tuple(range(104, 109)) + tuple(range(150, 164)) + (220,)

INDIAN_PINES_CLASSES = (
    "alfalfa", "corn_notill", "corn_mintill", "corn", "grass_pasture",
    "grass_trees", "grass_pasture_mowed", "hay_windrowed", "oats",
    "soybean_notill", "soybean_mintill", "soybean_clean", "wheat", "woods",
    "buildings_grass_trees_drives", "stone_steel_towers",
)
SALINAS_CLASSES = (
    "brocoli_green_weeds_1", "brocoli_green_weeds_2", "fallow",
    "fallow_rough_plow", "fallow_smooth", "stubble", "celery",
    "grapes_untrained", "soil_vinyard_develop", "corn_senesced_green_weeds",
    "lettuce_romaine_4wk", "lettuce_romaine_5wk", "lettuce_romaine_6wk",
    "lettuce_romaine_7wk", "vinyard_untrained", "vinyard_vertical_trellis",
)
PAVIA_CLASSES = (
    "asphalt", "meadows", "gravel", "trees", "painted_metal_sheets",
    "bare_soil", "bitumen", "self_blocking_bricks", "shadows",
)
DEBRIS_CLASSES = ("asphalt", "brick", "ceramic", "concrete", "tile")
FRUIT_CLASSES = {
    "ripeness": ("unripe", "ripe", "overripe"),
    "firmness": ("too_firm", "perfect", "too_soft"),
    "sweetness": ("not_sweet", "sweet", "overly_sweet"),
}


@dataclass(frozen=True)
class SceneInfo:
    """Registry facts about one remote-sensing scene."""

    scene_id: str
    camera_id: str
    shape: Tuple[int, int, int]
    class_names: Tuple[str, ...]
    class_pixel_counts: Tuple[int, ...]
    mat_keys: Tuple[str, str]  # (data key, ground-truth key)
    uris: Tuple[str, str]  # (data uri, ground-truth uri)

    @property
    def labeled_total(self) -> int:
        return sum(self.class_pixel_counts)

    def grid(self) -> WavelengthGrid:
        cam = CAMERAS[self.camera_id]
        if self.scene_id == "indian_pines":
            nominal = np.linspace(*cam.range_nm, 220)
            keep = [i for i in range(220) if (i + 1) not in _INDIAN_PINES_REMOVED]
            return WavelengthGrid(tuple(nominal[keep]), self.camera_id)
        # ROSIS nominally records 115 bands; the published Pavia scene keeps
        # 102, whose centers we interpolate linearly across the sensor range.
        return linear_grid(*cam.range_nm, self.shape[2], self.camera_id)


_EHU = "http://www.ehu.eus/ccwintco/uploads"

SCENES: Dict[str, SceneInfo] = {
    s.scene_id: s
    for s in [
        SceneInfo(
            "indian_pines", "aviris", (145, 145, 200), INDIAN_PINES_CLASSES,
            (46, 1428, 830, 237, 483, 730, 28, 478, 20, 972, 2455, 593, 205,
             1265, 386, 93),
            ("indian_pines_corrected", "indian_pines_gt"),
            (f"{_EHU}/6/67/Indian_pines_corrected.mat", f"{_EHU}/c/c4/Indian_pines_gt.mat"),
        ),
        SceneInfo(
            "pavia_university", "rosis", (610, 340, 102), PAVIA_CLASSES,
            (6631, 18649, 2099, 3064, 1345, 5029, 1330, 3682, 947),
            ("paviaU", "paviaU_gt"),
            (f"{_EHU}/e/ee/PaviaU.mat", f"{_EHU}/5/50/PaviaU_gt.mat"),
        ),
        SceneInfo(
            "salinas", "aviris", (512, 217, 224), SALINAS_CLASSES,
            (2009, 3726, 1976, 1394, 2678, 3959, 3579, 11271, 6203, 3278,
             1068, 1927, 916, 1070, 7268, 1807),
            ("salinas_corrected", "salinas_gt"),
            (f"{_EHU}/a/a3/Salinas_corrected.mat", f"{_EHU}/f/fa/Salinas_gt.mat"),
        ),
    ]
}

HRSS_TRAIN_RATIOS = (0.05, 0.1, 0.3)


@dataclass(frozen=True)
class AssetRef:
    uri: str
    sha256: Optional[str]
    filename: str
    kind: str = "scene"  # scene | labels


@dataclass(frozen=True)
class ManifestEntry:
    config: DataConfig
    shape: Tuple[int, ...]
    class_names: Tuple[str, ...]
    assets: Tuple[AssetRef, ...] = ()
    split_rule: Optional[dict] = None
    fixed_split: Optional[Dict[str, Tuple[str, ...]]] = None
    wavelengths: Optional[Tuple[float, ...]] = None
    expected_sizes: Optional[Tuple[int, int, int]] = None

    def __post_init__(self):
        if self.config.dataset_id == "hrss":
            if self.split_rule is None:
                raise ValidationError(f"{self.config.key}: HRSS entries need a split rule")
        else:
            if self.fixed_split is None:
                raise ValidationError(
                    f"{self.config.key}: fruit/debris entries need a fixed split listing"
                )
        if self.fixed_split is not None:
            seen = set()
            for tag in ("train", "val", "test"):
                ids = self.fixed_split.get(tag, ())
                dup = seen.intersection(ids)
                if dup:
                    raise ValidationError(
                        f"{self.config.key}: split members appear twice: {sorted(dup)[:3]}"
                    )
                seen.update(ids)

    @property
    def class_count(self) -> int:
        return len(self.class_names)

    def grid(self) -> WavelengthGrid:
        if self.wavelengths is not None:
            return WavelengthGrid(self.wavelengths, self.config.camera_id)
        if self.config.dataset_id == "hrss" and self.config.scene_or_item in SCENES:
            scene = SCENES[self.config.scene_or_item]
            if scene.shape == tuple(self.shape):
                return scene.grid()
        cam = CAMERAS[self.config.camera_id]
        return cam.nominal_grid(self.shape[-1])


class DatasetManifest:
    """Ordered collection of manifest entries, keyed by configuration."""

    def __init__(self, entries: Sequence[ManifestEntry]):
        self._entries: Dict[str, ManifestEntry] = {}
        for entry in entries:
            key = entry.config.key
            if key in self._entries:
                raise ValidationError(f"duplicate configuration in manifest: {key}")
            self._entries[key] = entry

    def __len__(self):
        return len(self._entries)

    def __iter__(self):
        return iter(self.entries())

    def entries(self) -> List[ManifestEntry]:
        return sorted(self._entries.values(), key=lambda e: e.config.sort_key())

    def configs(self, dataset_id: Optional[str] = None) -> List[DataConfig]:
        configs = [e.config for e in self.entries()]
        if dataset_id is not None:
            configs = [c for c in configs if c.dataset_id == dataset_id]
        return configs

    def entry(self, config) -> ManifestEntry:
        key = config if isinstance(config, str) else config.key
        if key not in self._entries:
            raise KeyError(f"config not in manifest: {key}")
        return self._entries[key]

    def __contains__(self, config) -> bool:
        key = config if isinstance(config, str) else config.key
        return key in self._entries

    def subset(self, dataset_id: str) -> "DatasetManifest":
        return DatasetManifest([e for e in self.entries() if e.config.dataset_id == dataset_id])

    # -- serialization ----------------------------------------------------

    def to_dict(self) -> dict:
        entries = []
        for e in self.entries():
            d = {
                "config": e.config.key,
                "shape": list(e.shape),
                "classes": list(e.class_names),
                "assets": [
                    {"uri": a.uri, "sha256": a.sha256, "filename": a.filename, "kind": a.kind}
                    for a in e.assets
                ],
            }
            if e.split_rule is not None:
                d["splits"] = {"rule": dict(e.split_rule)}
            else:
                d["splits"] = {"fixed": {k: list(v) for k, v in e.fixed_split.items()}}
            if e.wavelengths is not None:
                d["wavelengths"] = [float(w) for w in e.wavelengths]
            if e.expected_sizes is not None:
                d["expected_sizes"] = list(e.expected_sizes)
            entries.append(d)
        return {"version": MANIFEST_VERSION, "entries": entries}

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_yaml())

    def content_hash(self) -> str:
        return hashlib.sha256(self.to_yaml().encode()).hexdigest()

    @staticmethod
    def from_dict(doc: dict) -> "DatasetManifest":
        if not isinstance(doc, dict) or "entries" not in doc:
            raise ValidationError("manifest must be a mapping with an 'entries' list")
        entries = []
        for i, d in enumerate(doc["entries"]):
            try:
                entries.append(_entry_from_dict(d))
            except (ValidationError, KeyError, TypeError) as err:
                raise ValidationError(f"manifest entry {i}: {err}") from err
        return DatasetManifest(entries)

    @staticmethod
    def from_yaml(text: str) -> "DatasetManifest":
        try:
            doc = yaml.safe_load(io.StringIO(text))
        except yaml.YAMLError as err:
            raise ValidationError(f"manifest parse error: {err}") from err
        return DatasetManifest.from_dict(doc)

    @staticmethod
    def load(path) -> "DatasetManifest":
        with open(path) as fh:
            return DatasetManifest.from_yaml(fh.read())


def _entry_from_dict(d: dict) -> ManifestEntry:
    config = parse_config_key(d["config"])
    splits = d.get("splits", {})
    if not isinstance(splits, dict) or not ({"rule", "fixed"} & set(splits)):
        raise ValidationError(f"{d['config']}: splits must carry a 'rule' or 'fixed' key")
    fixed = splits.get("fixed")
    if fixed is not None:
        fixed = {k: tuple(str(x) for x in v) for k, v in fixed.items()}
    classes = d["classes"]
    if isinstance(classes, int):
        classes = tuple(f"class_{i}" for i in range(classes))
    assets = tuple(
        AssetRef(a["uri"], a.get("sha256"), a["filename"], a.get("kind", "scene"))
        for a in d.get("assets", [])
    )
    wavelengths = d.get("wavelengths")
    expected = d.get("expected_sizes")
    return ManifestEntry(
        config=config,
        shape=tuple(int(v) for v in d["shape"]),
        class_names=tuple(classes),
        assets=assets,
        split_rule=splits.get("rule"),
        fixed_split=fixed,
        wavelengths=tuple(wavelengths) if wavelengths else None,
        expected_sizes=tuple(expected) if expected else None,
    )


# -- built-in benchmark manifest ------------------------------------------


def _fixed_ids(prefix: str, train: int, val: int, test: int) -> Dict[str, Tuple[str, ...]]:
    total = train + val + test
    ids = [f"{prefix}{i:04d}" for i in range(total)]
    return {
        "train": tuple(ids[:train]),
        "val": tuple(ids[train : train + val]),
        "test": tuple(ids[train + val :]),
    }


# (item, label target, camera, train/val/test record counts)
_FRUIT_ROWS = [
    ("avocado", "firmness", "corning_microhsi_410", 50, 9, 9),
    ("avocado", "firmness", "innospec_redeye", 40, 9, 9),
    ("avocado", "firmness", "specim_fx10", 139, 23, 24),
    ("avocado", "ripeness", "corning_microhsi_410", 50, 9, 9),
    ("avocado", "ripeness", "innospec_redeye", 40, 9, 9),
    ("avocado", "ripeness", "specim_fx10", 142, 24, 24),
    ("kaki", "firmness", "corning_microhsi_410", 56, 12, 12),
    ("kaki", "firmness", "specim_fx10", 56, 12, 12),
    ("kaki", "ripeness", "corning_microhsi_410", 56, 12, 12),
    ("kaki", "ripeness", "specim_fx10", 56, 12, 12),
    ("kaki", "sweetness", "corning_microhsi_410", 56, 12, 12),
    ("kaki", "sweetness", "specim_fx10", 56, 12, 12),
    ("kiwi", "firmness", "innospec_redeye", 58, 9, 9),
    ("kiwi", "firmness", "specim_fx10", 128, 21, 23),
    ("kiwi", "ripeness", "innospec_redeye", 58, 9, 9),
    ("kiwi", "ripeness", "specim_fx10", 138, 24, 24),
    ("kiwi", "sweetness", "innospec_redeye", 58, 9, 9),
    ("kiwi", "sweetness", "specim_fx10", 128, 21, 23),
    ("mango", "firmness", "corning_microhsi_410", 56, 12, 12),
    ("mango", "firmness", "specim_fx10", 56, 12, 12),
    ("mango", "ripeness", "corning_microhsi_410", 56, 12, 12),
    ("mango", "ripeness", "specim_fx10", 56, 12, 12),
    ("mango", "sweetness", "corning_microhsi_410", 56, 12, 12),
    ("mango", "sweetness", "specim_fx10", 56, 12, 12),
    ("papaya", "firmness", "corning_microhsi_410", 42, 9, 9),
    ("papaya", "firmness", "specim_fx10", 42, 9, 9),
    ("papaya", "ripeness", "corning_microhsi_410", 42, 9, 9),
    ("papaya", "ripeness", "specim_fx10", 42, 9, 9),
    ("papaya", "sweetness", "corning_microhsi_410", 42, 9, 9),
    ("papaya", "sweetness", "specim_fx10", 42, 9, 9),
]

# Published sample counts for the debris tracks: objectwise counts are
# recordings, patchwise counts are extracted patches.
_DEBRIS_ROWS = [
    ("objectwise", "corning_microhsi_410", (50, 10, 10)),
    ("patchwise", "corning_microhsi_410", (7624, 1570, 1292409)),
    ("objectwise", "specim_fx10", (50, 10, 10)),
    ("patchwise", "specim_fx10", (5974, 1262, 1119347)),
]

_DEBRIS_RECORD_SPLIT = (50, 10, 10)  # both tracks share the recording partition


def full_manifest() -> DatasetManifest:
    """The complete benchmark registry: 9 HRSS + 4 debris + 30 fruit entries."""
    entries: List[ManifestEntry] = []
    for scene in SCENES.values():
        data_uri, gt_uri = scene.uris
        assets = (
            AssetRef(data_uri, None, data_uri.rsplit("/", 1)[-1], "scene"),
            AssetRef(gt_uri, None, gt_uri.rsplit("/", 1)[-1], "labels"),
        )
        for ratio in HRSS_TRAIN_RATIOS:
            entries.append(
                ManifestEntry(
                    config=DataConfig("hrss", scene.scene_id, scene.camera_id,
                                      "patchwise", train_ratio=ratio),
                    shape=scene.shape,
                    class_names=scene.class_names,
                    assets=assets,
                    split_rule={"val_fraction": 0.25, "seed": 0},
                )
            )
    for task, camera, sizes in _DEBRIS_ROWS:
        prefix = f"debris_{camera}_"
        entries.append(
            ManifestEntry(
                config=DataConfig("debris", "debris", camera, task),
                shape=(64, 64, CAMERAS[camera].band_count),
                class_names=DEBRIS_CLASSES,
                fixed_split=_fixed_ids(prefix, *_DEBRIS_RECORD_SPLIT),
                expected_sizes=sizes,
            )
        )
    for item, target, camera, train, val, test in _FRUIT_ROWS:
        prefix = f"{item}_{target}_{camera}_"
        entries.append(
            ManifestEntry(
                config=DataConfig("fruit", item, camera, "objectwise", label_target=target),
                shape=(64, 64, CAMERAS[camera].band_count),
                class_names=FRUIT_CLASSES[target],
                fixed_split=_fixed_ids(prefix, train, val, test),
                expected_sizes=(train, val, test),
            )
        )
    return DatasetManifest(entries)


def list_configs(manifest: DatasetManifest, dataset_id: Optional[str] = None) -> List[DataConfig]:
    """All configurations in the manifest, lexicographically ordered."""
    return manifest.configs(dataset_id)
