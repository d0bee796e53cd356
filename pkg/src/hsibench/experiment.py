"""Experiment orchestration: declarative run descriptions, desk-scale
synthetic benchmarks, and the glue between registry, splits, training and
the results store."""

from __future__ import annotations

import logging
import os
from dataclasses import replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import yaml

from . import __version__
from .cube import DataConfig, PreprocessSpec, ValidationError, linear_grid, parse_config_key
from .ingest import SceneData, fetch_assets, load_scene, sha256_of, write_recordings_container, write_scene_container
from .models import ModelSpec, default_input
from .models.multihead import BackboneHeadModel, load_checkpoint, save_checkpoint
from .registry import CAMERAS, AssetRef, DatasetManifest, ManifestEntry, full_manifest
from .results import ResultsStore
from .splits import SplitAssignment, SplitSpec, assign_hrss_split, load_fixed_split
from .synthetic import SyntheticSpec, generate_synthetic, recordings_for_split
from .training import (
    ConfigData,
    PretrainPlan,
    RunResult,
    TrainConfig,
    build_seeded_model,
    finetune,
    prepare_config_data,
    pretrain,
    train,
)

log = logging.getLogger(__name__)

DEFAULT_CACHE_ENV = "HSIBENCH_CACHE"

_TRAIN_KEYS = {
    "lr0", "epochs", "batch_size", "early_stop_patience", "optimizer",
    "patch_size", "train_stride", "objectwise_size", "device",
}
_EXPERIMENT_KEYS = {
    "name", "manifest", "synthetic", "cache", "output", "configs", "models",
    "seeds", "train", "pretrain", "finetune",
}
_PRETRAIN_KEYS = {"model", "configs", "epochs", "batch_size", "lr0", "checkpoint", "seeds"}
_FINETUNE_KEYS = {"target", "checkpoint", "baseline", "seeds", "model"}
_SYNTHETIC_KEYS = {"seed", "scenes"}
_SCENE_KEYS = {
    "config", "x", "y", "bands", "class_count", "noise_sigma",
    "signature_seed", "records", "range_nm",
}


def default_cache_dir() -> Path:
    env = os.environ.get(DEFAULT_CACHE_ENV)
    if env:
        return Path(env)
    return Path.home() / ".cache" / "hsibench"


def _reject_unknown(doc: dict, allowed: set, where: str):
    unknown = set(doc) - allowed
    if unknown:
        raise ValidationError(f"{where}: unknown keys {sorted(unknown)}")


def train_config_from(doc: Optional[dict]) -> TrainConfig:
    if not doc:
        return TrainConfig()
    _reject_unknown(doc, _TRAIN_KEYS, "train section")
    return replace(TrainConfig(), **doc)


# -- synthetic benchmark -------------------------------------------------------


def build_synthetic_benchmark(doc: dict, cache_dir) -> DatasetManifest:
    """Generate desk-scale stand-in scenes plus a manifest describing them.

    Each scene reuses the real configuration axes (dataset, camera, task) so
    the full pipeline, including the pretraining matrix, runs offline.
    """
    _reject_unknown(doc, _SYNTHETIC_KEYS, "synthetic section")
    seed = int(doc.get("seed", 0))
    cache_dir = Path(cache_dir)
    entries = []
    for i, scene_doc in enumerate(doc.get("scenes", [])):
        _reject_unknown(scene_doc, _SCENE_KEYS, f"synthetic scene {i}")
        config = parse_config_key(scene_doc["config"])
        camera = CAMERAS[config.camera_id]
        lo, hi = scene_doc.get("range_nm", camera.range_nm)
        if lo < camera.range_nm[0] or hi > camera.range_nm[1]:
            raise ValidationError(
                f"synthetic scene {i}: range ({lo}, {hi}) outside camera "
                f"{config.camera_id} range {camera.range_nm}"
            )
        spec = SyntheticSpec(
            x=int(scene_doc["x"]), y=int(scene_doc["y"]), bands=int(scene_doc["bands"]),
            class_count=int(scene_doc["class_count"]),
            spectral_signature_seed=int(scene_doc.get("signature_seed", 0)),
            noise_sigma=float(scene_doc.get("noise_sigma", 0.05)),
            task_kind=config.task_kind,
        )
        grid = linear_grid(lo, hi, spec.bands, config.camera_id)
        out_dir = cache_dir / config.dataset_id / config.scene_or_item
        out_dir.mkdir(parents=True, exist_ok=True)
        base = out_dir / config.key.replace("/", "_")
        class_names = tuple(f"class_{c}" for c in range(spec.class_count))
        if config.dataset_id == "hrss":
            cube, mask, grid = generate_synthetic(spec, seed, grid, class_names)
            header = write_scene_container(base, cube, mask)
            split_def = {"split_rule": {"val_fraction": 0.25, "seed": 0}}
        else:
            counts = scene_doc.get("records", [30, 8, 8])
            prefix = config.key.replace("/", "_") + "_"
            fixed = {
                "train": tuple(f"{prefix}{j:03d}" for j in range(counts[0])),
                "val": tuple(f"{prefix}{counts[0] + j:03d}" for j in range(counts[1])),
                "test": tuple(f"{prefix}{counts[0] + counts[1] + j:03d}"
                              for j in range(counts[2])),
            }
            with_masks = config.task_kind == "patchwise"
            recs = recordings_for_split(spec, seed, fixed, grid, with_masks)
            header = write_recordings_container(
                base, [r.cube for r in recs], [r.record_id for r in recs],
                [r.label for r in recs], class_names,
                masks=[r.mask_labels for r in recs] if with_masks else None,
            )
            split_def = {"fixed_split": fixed}
        assets = [AssetRef(header.resolve().as_uri(), sha256_of(header), header.name, "scene")]
        for extra in sorted(header.parent.glob(header.stem + "*.bin")):
            assets.append(AssetRef(extra.resolve().as_uri(), sha256_of(extra), extra.name, "aux"))
        entries.append(ManifestEntry(
            config=config,
            shape=(spec.x, spec.y, spec.bands),
            class_names=class_names,
            assets=tuple(assets),
            wavelengths=grid.wavelengths_nm,
            **split_def,
        ))
    manifest = DatasetManifest(entries)
    manifest.save(cache_dir / "synthetic_manifest.yaml")
    return manifest


# -- data assembly -------------------------------------------------------------


class DataPipeline:
    """Caches loaded scenes, split assignments and prepared sample sets."""

    def __init__(self, manifest: DatasetManifest, cache_dir):
        self.manifest = manifest
        self.cache_dir = Path(cache_dir)
        self._scenes: Dict[str, SceneData] = {}
        self._assignments: Dict[str, SplitAssignment] = {}
        self._prepared: Dict[Tuple, ConfigData] = {}

    def scene(self, config) -> SceneData:
        entry = self.manifest.entry(config)
        key = entry.config.key
        if key not in self._scenes:
            paths = fetch_assets(self.manifest, key, self.cache_dir)
            self._scenes[key] = load_scene(entry, paths)
        return self._scenes[key]

    def assignment(self, config) -> SplitAssignment:
        entry = self.manifest.entry(config)
        key = entry.config.key
        if key not in self._assignments:
            if entry.split_rule is not None:
                data = self.scene(key)
                spec = SplitSpec(
                    train_ratio=entry.config.train_ratio,
                    val_fraction=float(entry.split_rule.get("val_fraction", 0.25)),
                    seed=int(entry.split_rule.get("seed", 0)),
                )
                self._assignments[key] = assign_hrss_split(
                    data.mask, spec, scene_id=entry.config.scene_or_item
                )
            else:
                self._assignments[key] = load_fixed_split(key, self.manifest)
        return self._assignments[key]

    def config_data(self, config, input_spec: PreprocessSpec, cfg: TrainConfig) -> ConfigData:
        entry = self.manifest.entry(config)
        cache_key = (entry.config.key, input_spec.mode, input_spec.components,
                     cfg.patch_size, cfg.train_stride, cfg.objectwise_size)
        if cache_key not in self._prepared:
            self._prepared[cache_key] = prepare_config_data(
                entry, self.scene(config), self.assignment(config), input_spec, cfg
            )
        return self._prepared[cache_key]


# -- experiment files ----------------------------------------------------------


class Experiment:
    def __init__(self, doc: dict, base_dir: Optional[Path] = None):
        if not isinstance(doc, dict):
            raise ValidationError("experiment file must be a mapping")
        _reject_unknown(doc, _EXPERIMENT_KEYS, "experiment file")
        if doc.get("pretrain"):
            _reject_unknown(doc["pretrain"], _PRETRAIN_KEYS, "pretrain section")
        if doc.get("finetune"):
            _reject_unknown(doc["finetune"], _FINETUNE_KEYS, "finetune section")
        self.doc = doc
        self.base_dir = base_dir or Path.cwd()
        self.train_cfg = train_config_from(doc.get("train"))
        self.seeds = [int(s) for s in doc.get("seeds", [0])]
        self.models = list(doc.get("models", []))
        self.config_keys = list(doc.get("configs", []))

    @staticmethod
    def load(path) -> "Experiment":
        path = Path(path)
        with open(path) as fh:
            doc = yaml.safe_load(fh)
        return Experiment(doc, base_dir=path.parent)

    def _resolve(self, maybe_path) -> Path:
        p = Path(maybe_path)
        return p if p.is_absolute() else self.base_dir / p

    @property
    def cache_dir(self) -> Path:
        if self.doc.get("cache"):
            return self._resolve(self.doc["cache"])
        return default_cache_dir()

    @property
    def output_path(self) -> Path:
        out = self.doc.get("output", "results.jsonl")
        return self._resolve(out)

    def build_manifest(self) -> DatasetManifest:
        if self.doc.get("synthetic"):
            synth = self.doc["synthetic"]
            if isinstance(synth, str):
                with open(self._resolve(synth)) as fh:
                    synth = yaml.safe_load(fh)
            return build_synthetic_benchmark(synth, self.cache_dir)
        if self.doc.get("manifest"):
            return DatasetManifest.load(self._resolve(self.doc["manifest"]))
        return full_manifest()


def _model_spec(name: str, grid, hyperparameters: Optional[dict] = None) -> ModelSpec:
    input_spec = default_input(name)
    if input_spec.mode == "pca" and input_spec.components > len(grid):
        # Desk-scale cubes can have fewer bands than the published component
        # count; fall back to the largest valid projection.
        input_spec = PreprocessSpec("pca", len(grid))
    return ModelSpec(name, input_spec, dict(hyperparameters or {}))


def run_training_matrix(exp: Experiment, pipeline: DataPipeline, store: ResultsStore,
                        manifest_hash: str) -> List[RunResult]:
    results = []
    for key in exp.config_keys:
        entry = pipeline.manifest.entry(key)
        for name in exp.models:
            cfg = exp.train_cfg.resolve(name)
            spec = _model_spec(name, entry.grid())
            data = pipeline.config_data(key, spec.resolved_input(), cfg)
            for seed in exp.seeds:
                model = build_seeded_model(spec, data.grid, data.class_count,
                                           entry.config.task_kind, entry.config, seed)
                result, _ = train(model, data, cfg, seed)
                store.append(result, manifest_hash, __version__,
                             effective={"config": key, "model": name, "seed": seed})
                results.append(result)
                log.info("%s / %s / seed %d: accuracy %.4f",
                         name, key, seed, result.accuracy)
    return results


def run_pretraining(exp: Experiment, pipeline: DataPipeline,
                    manifest_hash: str) -> List[Path]:
    doc = exp.doc["pretrain"]
    name = doc["model"]
    keys = list(doc["configs"])
    cfg = exp.train_cfg.resolve(name)
    entries = [pipeline.manifest.entry(k) for k in keys]
    grids = [e.grid() for e in entries]
    lo = min(g.range_nm[0] for g in grids)
    hi = max(g.range_nm[1] for g in grids)
    spec = _model_spec(name, grids[0], {"wavelength_range": (lo, hi)})
    plan = PretrainPlan(
        configs=tuple(e.config for e in entries),
        lr0=float(doc.get("lr0", cfg.lr0)),
        epochs=int(doc.get("epochs", cfg.epochs)),
        batch_size=int(doc.get("batch_size", cfg.batch_size)),
    )
    datas = [pipeline.config_data(k, spec.resolved_input(), cfg) for k in keys]
    written = []
    for seed in [int(s) for s in doc.get("seeds", exp.seeds)]:
        model = build_seeded_model(spec, grids[0], datas[0].class_count,
                                   entries[0].config.task_kind, entries[0].config, seed)
        for data in datas[1:]:
            model.attach_head(data.config, data.class_count)
        pretrain(model, datas, plan, cfg, seed)
        ckpt = exp.output_path.parent / f"{name}_pretrained_seed{seed}.pt"
        if doc.get("checkpoint"):
            ckpt = exp._resolve(doc["checkpoint"])
            if len(doc.get("seeds", exp.seeds)) > 1:
                ckpt = ckpt.with_name(f"{ckpt.stem}_seed{seed}{ckpt.suffix}")
        ckpt.parent.mkdir(parents=True, exist_ok=True)
        save_checkpoint(model, ckpt, seed=seed, manifest_hash=manifest_hash)
        written.append(ckpt)
        log.info("pretrained %s on %d configs (lr %.4g), checkpoint %s",
                 name, plan.n_configs, plan.learning_rate, ckpt)
    return written


def run_finetuning(exp: Experiment, pipeline: DataPipeline, store: ResultsStore,
                   manifest_hash: str, checkpoints: Optional[Sequence[Path]] = None
                   ) -> List[RunResult]:
    doc = exp.doc["finetune"]
    target_key = doc["target"]
    entry = pipeline.manifest.entry(target_key)
    results = []
    seeds = [int(s) for s in doc.get("seeds", exp.seeds)]
    if checkpoints is None:
        checkpoints = [exp._resolve(doc["checkpoint"])] * len(seeds)
    for seed, ckpt in zip(seeds, checkpoints):
        model, meta = load_checkpoint(ckpt)
        cfg = exp.train_cfg.resolve(model.name)
        data = pipeline.config_data(target_key, model.input_spec, cfg)
        result, _ = finetune(model, data, cfg, seed,
                             provenance={"pretrained_from": str(ckpt.name)})
        store.append(result, manifest_hash, __version__,
                     effective={"config": target_key, "model": model.name, "seed": seed})
        results.append(result)
        if doc.get("baseline"):
            spec = _model_spec(model.name, data.grid,
                               model.hyperparameters)
            fresh = build_seeded_model(spec, data.grid, data.class_count,
                                       entry.config.task_kind, entry.config, seed)
            base_result, _ = train(fresh, data, cfg, seed)
            base_result.provenance = {"pretrained_from": None}
            store.append(base_result, manifest_hash, __version__,
                         effective={"config": target_key, "model": model.name,
                                    "seed": seed, "baseline": True})
            results.append(base_result)
    return results


def run_experiment(exp: Experiment) -> List[RunResult]:
    """Execute one declarative experiment end to end."""
    manifest = exp.build_manifest()
    manifest_hash = manifest.content_hash()
    pipeline = DataPipeline(manifest, exp.cache_dir)
    store = ResultsStore(exp.output_path)
    results: List[RunResult] = []
    if exp.config_keys and exp.models:
        results += run_training_matrix(exp, pipeline, store, manifest_hash)
    checkpoints = None
    if exp.doc.get("pretrain"):
        checkpoints = run_pretraining(exp, pipeline, manifest_hash)
    if exp.doc.get("finetune"):
        results += run_finetuning(exp, pipeline, store, manifest_hash, checkpoints)
    return results
