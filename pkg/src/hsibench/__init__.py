"""hsibench: a benchmark harness for hyperspectral image classification.

Deterministic class-balanced splits, a standardized training protocol, a
model zoo spanning spectral / spatial / spectral-spatial feature extraction,
and multi-head camera-agnostic pretraining with fine-tuning.
"""

__version__ = "0.1.0"

from .cube import (
    DataConfig,
    HyperspectralCube,
    LabelMask,
    PreprocessSpec,
    ValidationError,
    WavelengthGrid,
    linear_grid,
    parse_config_key,
)
from .registry import CAMERAS, SCENES, DatasetManifest, full_manifest, list_configs
from .splits import SplitAssignment, SplitSpec, assign_hrss_split, load_fixed_split, reduce_train_ratio

__all__ = [
    "__version__",
    "CAMERAS",
    "SCENES",
    "DataConfig",
    "DatasetManifest",
    "HyperspectralCube",
    "LabelMask",
    "PreprocessSpec",
    "SplitAssignment",
    "SplitSpec",
    "ValidationError",
    "WavelengthGrid",
    "assign_hrss_split",
    "full_manifest",
    "linear_grid",
    "list_configs",
    "load_fixed_split",
    "parse_config_key",
    "reduce_train_ratio",
]
