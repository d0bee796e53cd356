"""Model zoo registry and construction.

Each zoo entry declares its default input handling (matching how the model
family consumes the cube), whether it sees spatial context, and a backbone
builder. Models outside the built-in zoo can be registered as plugins; the
training-protocol override table covers them either way.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Tuple

from ..cube import DataConfig, PreprocessSpec, ValidationError, WavelengthGrid
from .multihead import (
    BackboneHeadModel,
    load_checkpoint,
    reinit_head_for_finetune,
    save_checkpoint,
)
from .resnet import ResNetBackbone, adapt_rgb_pretrained
from .wavelength_conv import WavelengthConv, wavelength_conv_weights
from .zoo import (
    Backbone,
    CNN1DBackbone,
    CNN2DBackbone,
    CNN3DBackbone,
    DeepHSBackbone,
    MLPBackbone,
    RNNBackbone,
)

DEFAULT_PCA_COMPONENTS = 40


@dataclass(frozen=True)
class ModelSpec:
    """A zoo model plus its input handling and per-model overrides."""

    name: str
    input: Optional[PreprocessSpec] = None
    hyperparameters: dict = field(default_factory=dict)

    def resolved_input(self) -> PreprocessSpec:
        if self.input is not None:
            return self.input
        return default_input(self.name)


@dataclass(frozen=True)
class ZooEntry:
    name: str
    builder: Callable
    default_input: PreprocessSpec
    spatial_context: bool
    allowed_modes: Tuple[str, ...]
    camera_agnostic: bool = False


_REGISTRY: Dict[str, ZooEntry] = {}


def register_model(entry: ZooEntry):
    """Add a model to the zoo; plugins use this too."""
    _REGISTRY[entry.name] = entry


def zoo_names() -> Tuple[str, ...]:
    return tuple(sorted(_REGISTRY))


def zoo_entry(name: str) -> ZooEntry:
    if name not in _REGISTRY:
        raise ValidationError(f"unknown model {name!r}; registered: {', '.join(zoo_names())}")
    return _REGISTRY[name]


def default_input(name: str) -> PreprocessSpec:
    return zoo_entry(name).default_input


def _range_for(spec: ModelSpec, grid: WavelengthGrid) -> Tuple[float, float]:
    rng = spec.hyperparameters.get("wavelength_range")
    return tuple(rng) if rng else grid.range_nm


def build_backbone(name: str, input_spec: PreprocessSpec, grid: Optional[WavelengthGrid],
                   hyperparameters: dict) -> Backbone:
    spec = ModelSpec(name, input_spec, dict(hyperparameters))
    entry = zoo_entry(name)
    return entry.builder(spec, grid)


def build_model(spec: ModelSpec, grid: WavelengthGrid, class_count: int,
                task_kind: str = "patchwise",
                config: Optional[DataConfig] = None) -> BackboneHeadModel:
    """Instantiate a zoo model with one attached head.

    The input spec is validated against the model family (a spatial-only
    model cannot take a raw cube, a spectral model cannot take a collapsed
    one, and PCA components must not exceed the grid's band count).
    """
    entry = zoo_entry(spec.name)
    input_spec = spec.resolved_input()
    if input_spec.mode not in entry.allowed_modes:
        raise ValidationError(
            f"{spec.name} accepts input modes {entry.allowed_modes}, got {input_spec.mode!r}"
        )
    input_spec.output_bands(len(grid))  # raises if pca components exceed bands
    backbone = entry.builder(ModelSpec(spec.name, input_spec, dict(spec.hyperparameters)), grid)
    model = BackboneHeadModel(spec.name, backbone, input_spec, grid, spec.hyperparameters)
    key = config if config is not None else "default"
    model.attach_head(key, class_count)
    return model


# -- builders ----------------------------------------------------------------


def _effective_bands(spec: ModelSpec, grid: WavelengthGrid) -> int:
    return spec.resolved_input().output_bands(len(grid))


def _build_mlp(spec, grid):
    return MLPBackbone(_effective_bands(spec, grid))


def _build_rnn(spec, grid):
    return RNNBackbone(_effective_bands(spec, grid))


def _build_cnn_1d(spec, grid):
    return CNN1DBackbone(_effective_bands(spec, grid))


def _build_cnn_2d(spec, grid):
    return CNN2DBackbone(_effective_bands(spec, grid))


def _build_cnn_2d_spatial(spec, grid):
    return CNN2DBackbone(1)


def _build_cnn_2d_spectral(spec, grid):
    return CNN2DBackbone(_effective_bands(spec, grid), spectral_only=True)


def _build_cnn_3d(spec, grid):
    return CNN3DBackbone(_effective_bands(spec, grid))


def _build_deephs(spec, grid):
    return DeepHSBackbone(_effective_bands(spec, grid))


def _build_deephs_hyve(spec, grid):
    return DeepHSBackbone(None, hyve=True, wavelength_range=_range_for(spec, grid))


def _build_deephs_hyve_large(spec, grid):
    return DeepHSBackbone(None, widths=(14, 56, 104, 152, 200), hyve=True,
                          wavelength_range=_range_for(spec, grid))


def _resnet_builder(depth: str, hyve: bool):
    def build(spec, grid):
        bands = None if hyve else _effective_bands(spec, grid)
        return ResNetBackbone(depth, bands, hyve=hyve,
                              wavelength_range=_range_for(spec, grid) if hyve else None)

    return build


_RAW = PreprocessSpec("raw")
_PCA40 = PreprocessSpec("pca", DEFAULT_PCA_COMPONENTS)
_MEAN = PreprocessSpec("spectral_mean")

for _entry in [
    ZooEntry("mlp", _build_mlp, _RAW, False, ("raw", "center_pixel")),
    ZooEntry("rnn", _build_rnn, _RAW, False, ("raw", "center_pixel")),
    ZooEntry("cnn_1d", _build_cnn_1d, _RAW, False, ("raw", "center_pixel")),
    ZooEntry("cnn_2d", _build_cnn_2d, _PCA40, True, ("pca", "raw")),
    ZooEntry("cnn_2d_spatial", _build_cnn_2d_spatial, _MEAN, True, ("spectral_mean",)),
    ZooEntry("cnn_2d_spectral", _build_cnn_2d_spectral, _RAW, False, ("raw", "center_pixel")),
    ZooEntry("cnn_3d", _build_cnn_3d, _PCA40, True, ("pca", "raw")),
    ZooEntry("deephs_net", _build_deephs, _RAW, True, ("raw",)),
    ZooEntry("deephs_net_hyve", _build_deephs_hyve, _RAW, True, ("raw",), True),
    ZooEntry("deephs_net_hyve_large", _build_deephs_hyve_large, _RAW, True, ("raw",), True),
    ZooEntry("resnet18", _resnet_builder("18", False), _RAW, True, ("raw",)),
    ZooEntry("resnet152", _resnet_builder("152", False), _RAW, True, ("raw",)),
    ZooEntry("resnet18_hyve", _resnet_builder("18", True), _RAW, True, ("raw",), True),
    ZooEntry("resnet152_hyve", _resnet_builder("152", True), _RAW, True, ("raw",), True),
]:
    register_model(_entry)


def switch_head(model: BackboneHeadModel, config) -> str:
    return model.switch_head(config)


def attach_head(model: BackboneHeadModel, config, class_count: int) -> str:
    return model.attach_head(config, class_count)
