"""ResNet backbones, with optional wavelength-parameterized first layer."""

from __future__ import annotations

from typing import Optional, Tuple

import torch
import torch.nn as nn
from torchvision.models import resnet18, resnet152

from ..cube import ValidationError, WavelengthGrid
from .wavelength_conv import WavelengthConv
from .zoo import Backbone

_BUILDERS = {"18": (resnet18, 512), "152": (resnet152, 2048)}


class ResNetBackbone(Backbone):
    uses_spatial = True

    def __init__(self, depth: str, bands: Optional[int], hyve: bool = False,
                 wavelength_range: Optional[Tuple[float, float]] = None,
                 components: int = 5):
        super().__init__()
        builder, feat = _BUILDERS[depth]
        self.net = builder(weights=None)
        self.net.fc = nn.Identity()
        self.feature_dim = feat
        self.hyve = hyve
        if hyve:
            if wavelength_range is None:
                raise ValidationError("wavelength-parameterized layer needs a range")
            self.camera_agnostic = True
            self.net.conv1 = nn.Identity()
            self.first = WavelengthConv(64, 7, wavelength_range, components=components,
                                        stride=2, padding=3, bias=False)
        else:
            if bands is None:
                raise ValidationError("channel convolution needs a band count")
            self.expected_bands = bands
            self.net.conv1 = nn.Conv2d(bands, 64, 7, stride=2, padding=3, bias=False)

    def forward(self, x, grid: Optional[WavelengthGrid] = None):
        self.check_input(x)
        if self.hyve:
            if grid is None:
                raise ValidationError("camera-agnostic backbone needs the wavelength grid")
            x = self.first(x, grid)
        return self.net(x)


def adapt_rgb_pretrained(backbone: ResNetBackbone, rgb_state: dict) -> int:
    """Copy RGB-pretrained weights into the backbone where shapes match.

    The first convolution (3 input channels in RGB checkpoints) and the
    classifier weights never match and are kept as initialized. Returns the
    number of adopted tensors. This is the negative-control hook for
    comparing hyperspectral pretraining against RGB pretraining.
    """
    own = backbone.net.state_dict()
    adopted = {}
    for key, value in rgb_state.items():
        if key.startswith("fc."):
            continue
        if key in own and own[key].shape == value.shape:
            adopted[key] = value
    own.update(adopted)
    backbone.net.load_state_dict(own)
    return len(adopted)
