"""Shared backbone with per-configuration classification heads.

Each head is a batch-normalization stage followed by a fully-connected
classifier; exactly one head is active at forward time, so gradients flow
only into the backbone and the selected head. Fine-tuning re-initializes a
head's fully-connected weights while keeping its batch-normalization
parameters and running statistics, and never touches the backbone.
"""

from __future__ import annotations

import math
from typing import Dict, Optional, Tuple

import torch
import torch.nn as nn

from ..cube import DataConfig, PreprocessSpec, ValidationError, WavelengthGrid
from .zoo import Backbone

CHECKPOINT_VERSION = 1


def _head_key(config) -> str:
    return config if isinstance(config, str) else config.key


# nn.ModuleDict forbids "." in names; config keys carry ratios like r0.3.
def _escape(key: str) -> str:
    return key.replace(".", "~")


def _unescape(name: str) -> str:
    return name.replace("~", ".")


class Head(nn.Module):
    def __init__(self, feature_dim: int, class_count: int):
        super().__init__()
        self.norm = nn.BatchNorm1d(feature_dim)
        self.fc = nn.Linear(feature_dim, class_count)

    @property
    def class_count(self) -> int:
        return self.fc.out_features

    def forward(self, features):
        return self.fc(self.norm(features))


class BackboneHeadModel(nn.Module):
    def __init__(self, name: str, backbone: Backbone, input_spec: PreprocessSpec,
                 default_grid: Optional[WavelengthGrid] = None,
                 hyperparameters: Optional[dict] = None):
        super().__init__()
        self.name = name
        self.backbone = backbone
        self.input_spec = input_spec
        self.default_grid = default_grid
        self.hyperparameters = dict(hyperparameters or {})
        self._heads = nn.ModuleDict()
        self.active_key: Optional[str] = None

    @property
    def feature_dim(self) -> int:
        return self.backbone.feature_dim

    @property
    def camera_agnostic(self) -> bool:
        return self.backbone.camera_agnostic

    @property
    def heads(self) -> Dict[str, Head]:
        """Read-only view keyed by configuration key."""
        return {_unescape(name): head for name, head in self._heads.items()}

    def attach_head(self, config, class_count: int) -> str:
        key = _head_key(config)
        if _escape(key) in self._heads:
            raise ValidationError(f"head already attached: {key}")
        self._heads[_escape(key)] = Head(self.feature_dim, class_count)
        if self.active_key is None:
            self.active_key = key
        return key

    def switch_head(self, config) -> str:
        key = _head_key(config)
        if _escape(key) not in self._heads:
            raise ValidationError(f"no head for configuration {key}")
        self.active_key = key
        return key

    @property
    def active_head(self) -> Head:
        if self.active_key is None:
            raise ValidationError("model has no attached head")
        return self._heads[_escape(self.active_key)]

    def features(self, x: torch.Tensor, grid: Optional[WavelengthGrid] = None) -> torch.Tensor:
        return self.backbone(x, grid if grid is not None else self.default_grid)

    def forward(self, x: torch.Tensor, grid: Optional[WavelengthGrid] = None) -> torch.Tensor:
        return self.active_head(self.features(x, grid))

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters() if p.requires_grad)

    def backbone_fingerprint(self) -> str:
        """Order-stable hash of all backbone tensors (weights and buffers)."""
        import hashlib

        h = hashlib.sha256()
        state = self.backbone.state_dict()
        for key in sorted(state):
            h.update(key.encode())
            h.update(state[key].detach().cpu().numpy().tobytes())
        return h.hexdigest()


def _reinit_linear(fc: nn.Linear, seed: int):
    g = torch.Generator().manual_seed(seed)
    bound = 1.0 / math.sqrt(fc.in_features)
    with torch.no_grad():
        fc.weight.copy_((torch.rand(fc.weight.shape, generator=g) * 2 - 1) * bound)
        if fc.bias is not None:
            fc.bias.copy_((torch.rand(fc.bias.shape, generator=g) * 2 - 1) * bound)


def reinit_head_for_finetune(model: BackboneHeadModel, config, class_count: int,
                             seed: int = 0) -> BackboneHeadModel:
    """Fresh fully-connected head weights; batch-normalization state and the
    backbone stay exactly as checkpointed.

    If the target configuration has no head yet, a new one is attached; its
    batch-normalization stage inherits the pretrained statistics when the
    checkpoint carries exactly one head (the unambiguous case), and starts
    fresh otherwise.
    """
    key = _head_key(config)
    if key in model.heads:
        head = model.heads[key]
        if head.class_count != class_count:
            head.fc = nn.Linear(model.feature_dim, class_count)
        _reinit_linear(head.fc, seed)
    else:
        donors = list(model.heads.values())
        model.attach_head(key, class_count)
        head = model.heads[key]
        _reinit_linear(head.fc, seed)
        if len(donors) == 1:
            head.norm.load_state_dict(donors[0].norm.state_dict())
    model.switch_head(key)
    return model


# -- checkpoints -------------------------------------------------------------


def save_checkpoint(model: BackboneHeadModel, path, seed: Optional[int] = None,
                    manifest_hash: Optional[str] = None):
    grid = model.default_grid
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "model_name": model.name,
        "input_spec": {"mode": model.input_spec.mode,
                       "components": model.input_spec.components},
        "hyperparameters": model.hyperparameters,
        "grid": None if grid is None else {
            "wavelengths_nm": list(grid.wavelengths_nm),
            "camera_id": grid.camera_id,
        },
        "backbone_state": model.backbone.state_dict(),
        "heads": {
            key: {"class_count": head.class_count, "state": head.state_dict()}
            for key, head in model.heads.items()
        },
        "active_key": model.active_key,
        "seed": seed,
        "manifest_hash": manifest_hash,
    }
    torch.save(payload, path)


def load_checkpoint(path) -> Tuple[BackboneHeadModel, dict]:
    from . import build_backbone  # late import; registry depends on this module

    payload = torch.load(path, map_location="cpu", weights_only=False)
    version = payload.get("format_version")
    if version is None or version > CHECKPOINT_VERSION:
        raise ValidationError(f"unsupported checkpoint version: {version}")
    spec_d = payload["input_spec"]
    input_spec = PreprocessSpec(spec_d["mode"], spec_d["components"])
    grid = None
    if payload["grid"] is not None:
        grid = WavelengthGrid(tuple(payload["grid"]["wavelengths_nm"]),
                              payload["grid"]["camera_id"])
    backbone = build_backbone(payload["model_name"], input_spec, grid,
                              payload["hyperparameters"])
    model = BackboneHeadModel(payload["model_name"], backbone, input_spec, grid,
                              payload["hyperparameters"])
    model.backbone.load_state_dict(payload["backbone_state"])
    for key, head_d in payload["heads"].items():
        model.attach_head(key, head_d["class_count"])
        model.heads[key].load_state_dict(head_d["state"])
    if payload["active_key"] is not None:
        model.switch_head(payload["active_key"])
    meta = {"seed": payload.get("seed"), "manifest_hash": payload.get("manifest_hash"),
            "model_name": payload["model_name"]}
    return model, meta
