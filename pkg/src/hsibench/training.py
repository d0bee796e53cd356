"""Standardized training, pretraining and fine-tuning.

All models share one protocol: Adam at lr 0.01 decayed x0.1 at epochs 30 and
45, cross-entropy loss, 50 epochs, batch size 32, class-balanced batches,
flip/rotate/cut/crop augmentation, early stopping and best-validation-loss
checkpointing — with the documented per-model exceptions. Pretraining runs
the same engine over N configurations at once with mixed batches, one head
per configuration, and learning rate 0.01/N.

Everything is keyed by (seed, epoch, batch), so a run is bitwise
reproducible on a fixed platform regardless of how samples are produced.
"""

from __future__ import annotations

import copy
import hashlib
import math
import time
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn.functional as F

from .cube import DataConfig, PreprocessSpec, ValidationError, WavelengthGrid
from .ingest import Recording, SceneData
from .models import ModelSpec, build_model
from .models.multihead import BackboneHeadModel, reinit_head_for_finetune, save_checkpoint
from .preprocess import CubePreprocessor, gather_training_pixels, preprocessor_for
from .registry import ManifestEntry
from .sampler import (
    AugmentSpec,
    PatchSource,
    PatchSpec,
    Sample,
    SampleSet,
    augment,
    bilinear_resize,
    mixed_batch_schedule,
)
from .splits import SplitAssignment
from .synthetic import keyed_rng

SPLIT_TAGS = ("train", "val", "test")

# Documented per-model protocol exceptions (batch size / epochs / learning
# rate / optimizer). Plugin models keep their exceptions here as well.
MODEL_OVERRIDES: Dict[str, dict] = {
    "mlp": {"lr0": 0.001},
    "cnn_3d": {"batch_size": 8},
    "deephs_hybrid_net": {"batch_size": 4},
    "spectral_net": {"batch_size": 8, "optimizer": "sgd"},
    "hybrid_sn": {"batch_size": 16, "lr0": 0.0001},
    "attention_cnn": {"lr0": 0.0001},
    "hit": {"batch_size": 16, "epochs": 100},
}


@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 0.01
    epochs: int = 50
    batch_size: int = 32
    decay_epochs: Tuple[int, ...] = (30, 45)
    decay_factor: float = 0.1
    early_stop_patience: int = 10
    optimizer: str = "adam"
    seeds: Tuple[int, ...] = (0, 1, 2)
    patch_size: int = 63
    train_stride: int = 1
    objectwise_size: int = 128
    augment: AugmentSpec = field(default_factory=AugmentSpec)
    device: str = "cpu"
    apply_model_overrides: bool = True

    def resolve(self, model_name: str) -> "TrainConfig":
        """Per-model protocol exceptions applied on top of the defaults."""
        if not self.apply_model_overrides:
            return self
        overrides = MODEL_OVERRIDES.get(model_name)
        return replace(self, **overrides) if overrides else self

    def lr_at_epoch(self, epoch: int, base_lr: Optional[float] = None) -> float:
        """Learning rate for a 1-based epoch index under stepwise decay."""
        lr = self.lr0 if base_lr is None else base_lr
        for milestone in self.decay_epochs:
            if epoch >= milestone:
                lr *= self.decay_factor
        return lr


@dataclass(frozen=True)
class PretrainPlan:
    configs: Tuple[DataConfig, ...]
    lr0: float = 0.01
    epochs: int = 50
    batch_size: int = 32

    def __post_init__(self):
        if len(self.configs) < 1:
            raise ValidationError("pretraining needs at least one configuration")

    @property
    def n_configs(self) -> int:
        return len(self.configs)

    @property
    def learning_rate(self) -> float:
        return self.lr0 / self.n_configs

    def covering_range(self, grids: Sequence[WavelengthGrid]) -> Tuple[float, float]:
        los, his = zip(*(g.range_nm for g in grids))
        return min(los), max(his)


@dataclass
class RunResult:
    config_key: str
    model_name: str
    seed: int
    accuracy: float
    best_epoch: int
    wall_time_s: float
    provenance: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "config": self.config_key,
            "model": self.model_name,
            "seed": self.seed,
            "accuracy": self.accuracy,
            "best_epoch": self.best_epoch,
            "wall_time_s": self.wall_time_s,
            "provenance": self.provenance,
        }


# -- data assembly ------------------------------------------------------------


@dataclass
class ConfigData:
    """Model-ready sample sets for one configuration."""

    config: DataConfig
    grid: WavelengthGrid
    class_names: Tuple[str, ...]
    train: SampleSet
    val: SampleSet
    test: SampleSet
    preprocessor: CubePreprocessor

    @property
    def class_count(self) -> int:
        return len(self.class_names)


def _check_test_isolation(uid_sets: Dict[str, set]):
    for tag in ("train", "val"):
        overlap = uid_sets[tag] & uid_sets["test"]
        if overlap:
            raise ValidationError(
                f"test samples leaked into the {tag} stream: {sorted(overlap)[:3]}"
            )


def _recording_lookup(recordings: Sequence[Recording]) -> Dict[str, Recording]:
    return {r.record_id: r for r in recordings}


def prepare_config_data(entry: ManifestEntry, data: SceneData,
                        assignment: SplitAssignment, input_spec: PreprocessSpec,
                        cfg: TrainConfig) -> ConfigData:
    """Fit preprocessing on the training split and build the three sample
    streams. Test isolation is asserted by id tagging."""
    pre = preprocessor_for(input_spec)
    config = entry.config
    if data.cube is not None:
        if pre.needs_fit:
            train_coords = np.array(assignment.train, dtype=np.int64)
            pre.fit(gather_training_pixels(data.cube, train_coords))
        transformed = pre.transform(data.cube).astype(np.float32)
        patch_spec = PatchSpec(size=cfg.patch_size, train_stride=cfg.train_stride)
        sources = {
            tag: PatchSource(transformed, data.mask.labels, assignment, tag,
                             patch_spec, config)
            for tag in SPLIT_TAGS
        }
        _check_test_isolation({tag: set(assignment.members(tag)) for tag in SPLIT_TAGS})
        sets = {tag: SampleSet.from_source(src) for tag, src in sources.items()}
    else:
        lookup = _recording_lookup(data.recordings)
        split_ids = {tag: assignment.members(tag) for tag in SPLIT_TAGS}
        _check_test_isolation({tag: set(ids) for tag, ids in split_ids.items()})
        if pre.needs_fit:
            train_pixels = np.concatenate(
                [lookup[rid].cube.pixels() for rid in split_ids["train"]]
            ).astype(np.float64)
            pre.fit(train_pixels)
        if config.task_kind == "objectwise":
            sets = {
                tag: _objectwise_samples(lookup, ids, pre, cfg, config)
                for tag, ids in split_ids.items()
            }
        else:
            patch_spec = PatchSpec(size=cfg.patch_size, train_stride=cfg.train_stride)
            sets = {
                tag: _recording_patch_samples(lookup, ids, pre, patch_spec, tag, config)
                for tag, ids in split_ids.items()
            }
    return ConfigData(config, data.grid, tuple(data.class_names),
                      sets["train"], sets["val"], sets["test"], pre)


def _objectwise_samples(lookup, ids, pre: CubePreprocessor, cfg: TrainConfig,
                        config: DataConfig) -> SampleSet:
    samples = []
    for rid in ids:
        rec = lookup[rid]
        arr = pre.transform(rec.cube).astype(np.float32)
        resized = bilinear_resize(arr, cfg.objectwise_size, cfg.objectwise_size)
        samples.append(Sample(resized.astype(np.float32), rec.label, config, uid=(rid,)))
    return SampleSet.from_samples(samples, config)


def _recording_patch_samples(lookup, ids, pre: CubePreprocessor, patch_spec: PatchSpec,
                             split_tag: str, config: DataConfig) -> SampleSet:
    """Patches from the segmentation masks of the split's recordings."""
    stride = patch_spec.train_stride if split_tag in ("train", "val") else patch_spec.test_stride
    half = patch_spec.size // 2
    index: List[Tuple[np.ndarray, Tuple[int, int], int, str]] = []
    for rid in ids:
        rec = lookup[rid]
        if rec.mask_labels is None:
            raise ValidationError(f"recording {rid} has no segmentation mask")
        padded = np.pad(pre.transform(rec.cube).astype(np.float32),
                        ((half, half), (half, half), (0, 0)), mode="reflect")
        for class_id in np.unique(rec.mask_labels[rec.mask_labels >= 0]):
            coords = np.argwhere(rec.mask_labels == class_id)[::stride]
            for x, y in coords:
                index.append((padded, (int(x), int(y)), int(class_id), rid))
    labels = np.array([c for _, _, c, _ in index], dtype=np.int64)

    def get(i: int) -> Sample:
        padded, (x, y), label, rid = index[i]
        s = patch_spec.size
        return Sample(np.ascontiguousarray(padded[x : x + s, y : y + s, :]),
                      label, config, uid=(rid, x, y))

    return SampleSet(get, labels, config)


# -- engine -------------------------------------------------------------------


def derive_seed(*parts) -> int:
    digest = hashlib.sha256("/".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(digest[:4], "little")


def collate(batch: Sequence[Sample], device: str = "cpu") -> Tuple[torch.Tensor, torch.Tensor]:
    """(x, y, band) samples to a (batch, band, x, y) tensor plus labels."""
    arr = np.stack([np.moveaxis(s.tensor, 2, 0) for s in batch]).astype(np.float32)
    labels = np.array([s.label for s in batch], dtype=np.int64)
    return torch.from_numpy(arr).to(device), torch.from_numpy(labels).to(device)


def _eval_loss(model: BackboneHeadModel, data: ConfigData, device: str,
               batch_size: int = 64) -> float:
    model.eval()
    total, count = 0.0, 0
    with torch.no_grad():
        for start in range(0, len(data.val), batch_size):
            batch = [data.val.get(i) for i in range(start, min(start + batch_size, len(data.val)))]
            x, y = collate(batch, device)
            loss = F.cross_entropy(model(x, data.grid), y, reduction="sum")
            total += float(loss)
            count += len(batch)
    return total / max(count, 1)


def evaluate(model: BackboneHeadModel, samples: SampleSet,
             grid: Optional[WavelengthGrid] = None, device: str = "cpu",
             batch_size: int = 64) -> float:
    """Fraction of correct predictions over all samples (one per sample)."""
    if len(samples) == 0:
        raise ValidationError("cannot evaluate on an empty sample set")
    model.eval()
    correct = 0
    with torch.no_grad():
        for start in range(0, len(samples), batch_size):
            batch = [samples.get(i) for i in range(start, min(start + batch_size, len(samples)))]
            x, y = collate(batch, device)
            pred = model(x, grid).argmax(dim=1)
            correct += int((pred == y).sum())
    return correct / len(samples)


def _check_wavelength_coverage(model: BackboneHeadModel, datas: Sequence[ConfigData]):
    backbone = model.backbone
    if model.camera_agnostic:
        first = backbone.first  # WavelengthConv
        for data in datas:
            first.normalized_positions(data.grid)  # raises when outside range
    else:
        for data in datas:
            bands = model.input_spec.output_bands(len(data.grid))
            if backbone.expected_bands is not None and bands != backbone.expected_bands:
                raise ValidationError(
                    f"{data.config.key}: {bands} bands incompatible with model "
                    f"expecting {backbone.expected_bands}"
                )


@dataclass
class FitOutcome:
    model: BackboneHeadModel
    best_epoch: int
    best_val_loss: float
    epochs_run: int
    history: List[dict] = field(default_factory=list)


def _fit(model: BackboneHeadModel, datas: Sequence[ConfigData], lr: float,
         cfg: TrainConfig, seed: int, epochs: int, batch_size: int) -> FitOutcome:
    """Shared optimization loop for single-config training (N=1) and
    multi-config pretraining (N>1, mixed batches)."""
    device = cfg.device
    model.to(device)
    _check_wavelength_coverage(model, datas)
    for data in datas:
        if len(data.train) == 0:
            raise ValidationError(f"{data.config.key}: empty training split")
        if data.config.key not in model.heads:
            model.attach_head(data.config, data.class_count)
    torch.manual_seed(derive_seed("fit", seed))
    if cfg.optimizer == "adam":
        opt = torch.optim.Adam(model.parameters(), lr=lr)
    elif cfg.optimizer == "sgd":
        opt = torch.optim.SGD(model.parameters(), lr=lr, momentum=0.9)
    else:
        raise ValidationError(f"unknown optimizer {cfg.optimizer!r}")
    best_state = copy.deepcopy(model.state_dict())
    best_val = math.inf
    best_epoch = 0
    patience_left = cfg.early_stop_patience
    history = []
    epochs_run = 0
    for epoch in range(1, epochs + 1):
        epochs_run = epoch
        epoch_lr = cfg.lr_at_epoch(epoch, base_lr=lr)
        for group in opt.param_groups:
            group["lr"] = epoch_lr
        model.train()
        rng = keyed_rng("batches", seed, epoch)
        sets = [d.train for d in datas]
        for b_idx, batch in enumerate(mixed_batch_schedule(sets, batch_size, rng)):
            aug_rng = keyed_rng("augment", seed, epoch, b_idx)
            batch = [augment(s, cfg.augment, aug_rng) for s in batch]
            opt.zero_grad()
            total_loss = 0.0
            loss_terms = []
            for data in datas:
                group_samples = [s for s in batch if s.config == data.config]
                if not group_samples:
                    continue
                x, y = collate(group_samples, device)
                model.switch_head(data.config)
                logits = model(x, data.grid)
                loss_terms.append(F.cross_entropy(logits, y, reduction="sum"))
            loss = torch.stack([t for t in loss_terms]).sum() / len(batch)
            if not torch.isfinite(loss):
                raise RuntimeError(
                    f"training diverged: non-finite loss at epoch {epoch}, batch {b_idx} "
                    f"(model {model.name}, lr {epoch_lr:g})"
                )
            loss.backward()
            opt.step()
        val_losses = []
        for data in datas:
            if len(data.val) == 0:
                continue
            model.switch_head(data.config)
            val_losses.append(_eval_loss(model, data, device))
        val_loss = float(np.mean(val_losses)) if val_losses else math.inf
        history.append({"epoch": epoch, "lr": epoch_lr, "val_loss": val_loss})
        if val_loss < best_val:
            best_val = val_loss
            best_epoch = epoch
            best_state = copy.deepcopy(model.state_dict())
            patience_left = cfg.early_stop_patience
        else:
            patience_left -= 1
            if patience_left <= 0:
                break
    model.load_state_dict(best_state)
    return FitOutcome(model, best_epoch, best_val, epochs_run, history)


def train(model: BackboneHeadModel, data: ConfigData, cfg: TrainConfig,
          seed: int) -> Tuple[RunResult, FitOutcome]:
    """Standard single-configuration training; the best-validation-loss
    checkpoint is restored before test evaluation."""
    eff = cfg.resolve(model.name)
    started = time.perf_counter()
    outcome = _fit(model, [data], eff.lr0, eff, seed, eff.epochs, eff.batch_size)
    model.switch_head(data.config)
    accuracy = evaluate(model, data.test, data.grid, eff.device)
    result = RunResult(
        config_key=data.config.key,
        model_name=model.name,
        seed=seed,
        accuracy=accuracy,
        best_epoch=outcome.best_epoch,
        wall_time_s=time.perf_counter() - started,
    )
    return result, outcome


def pretrain(model: BackboneHeadModel, datas: Sequence[ConfigData], plan: PretrainPlan,
             cfg: TrainConfig, seed: int) -> FitOutcome:
    """Multi-head pretraining on mixed batches at learning rate lr0/N.

    Wavelength coverage of every configuration is checked before the first
    optimization step; early stopping follows the unweighted mean of the
    per-configuration validation losses.
    """
    ordered = {d.config.key: d for d in datas}
    missing = [c.key for c in plan.configs if c.key not in ordered]
    if missing:
        raise ValidationError(f"pretraining plan lacks data for: {', '.join(missing)}")
    plan_datas = [ordered[c.key] for c in plan.configs]
    return _fit(model, plan_datas, plan.learning_rate, cfg, seed,
                plan.epochs, plan.batch_size)


def finetune(model: BackboneHeadModel, target: ConfigData, cfg: TrainConfig, seed: int,
             provenance: Optional[dict] = None) -> Tuple[RunResult, FitOutcome]:
    """Specialize a pretrained model on one configuration: fresh head
    weights (batch-norm state kept), then end-to-end standard training."""
    reinit_head_for_finetune(model, target.config, target.class_count,
                             seed=derive_seed("head-reinit", seed))
    result, outcome = train(model, target, cfg, seed)
    result.provenance = dict(provenance or {})
    return result, outcome


def build_seeded_model(spec: ModelSpec, grid: WavelengthGrid, class_count: int,
                       task_kind: str, config: Optional[DataConfig], seed: int) -> BackboneHeadModel:
    """Deterministic model construction: weight init is keyed by the seed."""
    torch.manual_seed(derive_seed("init", spec.name, seed))
    return build_model(spec, grid, class_count, task_kind, config)
