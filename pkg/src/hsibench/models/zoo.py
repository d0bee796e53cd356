"""Backbone implementations of the model zoo.

Every backbone maps a (batch, bands, x, y) tensor to a flat feature vector;
classification heads live in :mod:`hsibench.models.multihead`. Spectral-only
backbones slice out the center pixel themselves, so feeding them a full
patch is legal and provably ignores the spatial context. Backbones with a
wavelength-parameterized first layer take the wavelength grid at forward
time and therefore accept any band count inside their declared range.
"""

from __future__ import annotations

from typing import Optional, Sequence, Tuple

import torch
import torch.nn as nn

from ..cube import ValidationError, WavelengthGrid
from .wavelength_conv import WavelengthConv


class Backbone(nn.Module):
    """Common backbone contract."""

    feature_dim: int
    uses_spatial: bool
    camera_agnostic: bool = False
    expected_bands: Optional[int] = None
    min_spatial: int = 1

    def check_input(self, x: torch.Tensor):
        if x.ndim != 4:
            raise ValidationError(f"expected (batch, bands, x, y) input, got {tuple(x.shape)}")
        if self.expected_bands is not None and x.shape[1] != self.expected_bands:
            raise ValidationError(
                f"{type(self).__name__} expects {self.expected_bands} bands, "
                f"got {x.shape[1]}"
            )
        if min(x.shape[2], x.shape[3]) < self.min_spatial:
            raise ValidationError(
                f"{type(self).__name__} needs at least {self.min_spatial}x"
                f"{self.min_spatial} spatial extent, got {x.shape[2]}x{x.shape[3]}"
            )


def _center_spectrum(x: torch.Tensor) -> torch.Tensor:
    return x[:, :, x.shape[2] // 2, x.shape[3] // 2]


class MLPBackbone(Backbone):
    """Two fully-connected layers over the center-pixel spectrum."""

    uses_spatial = False

    def __init__(self, bands: int, hidden: int = 96, out: int = 64):
        super().__init__()
        self.expected_bands = bands
        self.feature_dim = out
        self.net = nn.Sequential(
            nn.Linear(bands, hidden), nn.ReLU(inplace=True),
            nn.Linear(hidden, out), nn.ReLU(inplace=True),
        )

    def forward(self, x, grid=None):
        self.check_input(x)
        return self.net(_center_spectrum(x))


class RNNBackbone(Backbone):
    """GRU scanning the center-pixel spectrum band by band."""

    uses_spatial = False

    def __init__(self, bands: int, hidden: int = 96):
        super().__init__()
        self.expected_bands = bands
        self.feature_dim = hidden
        self.gru = nn.GRU(1, hidden, batch_first=True)

    def forward(self, x, grid=None):
        self.check_input(x)
        seq = _center_spectrum(x).unsqueeze(-1)  # (B, bands, 1)
        _, h = self.gru(seq)
        return h[-1]


class CNN1DBackbone(Backbone):
    """1-D convolutions along the spectral axis of the center pixel."""

    uses_spatial = False

    def __init__(self, bands: int, widths: Sequence[int] = (24, 48, 96), kernel: int = 11):
        super().__init__()
        self.expected_bands = bands
        self.feature_dim = widths[-1]
        layers = []
        c_in = 1
        for w in widths:
            layers += [
                nn.Conv1d(c_in, w, kernel, padding=kernel // 2),
                nn.BatchNorm1d(w), nn.ReLU(inplace=True),
            ]
            c_in = w
        self.net = nn.Sequential(*layers)

    def forward(self, x, grid=None):
        self.check_input(x)
        seq = _center_spectrum(x).unsqueeze(1)  # (B, 1, bands)
        return self.net(seq).mean(dim=2)


class CNN2DBackbone(Backbone):
    """Spatial 2-D convolutions; bands are mixed in the wide FC stage."""

    uses_spatial = True

    def __init__(self, bands: int, widths: Tuple[int, int] = (32, 64),
                 pooled: int = 8, fc_width: int = 1792, spectral_only: bool = False):
        super().__init__()
        self.expected_bands = bands
        self.spectral_only = spectral_only
        if spectral_only:
            self.uses_spatial = False
        c1, c2 = widths
        self.conv = nn.Sequential(
            nn.Conv2d(bands, c1, 3, padding=1), nn.BatchNorm2d(c1), nn.ReLU(inplace=True),
            nn.Conv2d(c1, c2, 3, padding=1), nn.BatchNorm2d(c2), nn.ReLU(inplace=True),
        )
        self.pool = nn.AdaptiveAvgPool2d(pooled)
        self.fc = nn.Linear(c2 * pooled * pooled, fc_width)
        self.act = nn.ReLU(inplace=True)
        self.feature_dim = fc_width

    def forward(self, x, grid=None):
        self.check_input(x)
        if self.spectral_only:
            x = _center_spectrum(x)[:, :, None, None]
        h = self.pool(self.conv(x)).flatten(1)
        return self.act(self.fc(h))


class CNN3DBackbone(Backbone):
    """3-D convolutions over (band, x, y) simultaneously."""

    uses_spatial = True
    min_spatial = 3  # spatial extent must cover the 3x3 kernel

    def __init__(self, bands: int, widths: Sequence[int] = (16, 32, 64),
                 pooled: int = 4, fc_width: int = 6912):
        super().__init__()
        self.expected_bands = bands
        layers = []
        c_in = 1
        for w in widths:
            layers += [nn.Conv3d(c_in, w, 3, padding=1), nn.BatchNorm3d(w),
                       nn.ReLU(inplace=True)]
            c_in = w
        self.net = nn.Sequential(*layers)
        self.pool = nn.AdaptiveAvgPool3d(pooled)
        self.fc = nn.Linear(widths[-1] * pooled**3, fc_width)
        self.act = nn.ReLU(inplace=True)
        self.feature_dim = fc_width

    def forward(self, x, grid=None):
        self.check_input(x)
        h = self.net(x.unsqueeze(1))  # (B, 1, bands, x, y)
        return self.act(self.fc(self.pool(h).flatten(1)))


class DeepHSBackbone(Backbone):
    """Compact 2-D CNN for small hyperspectral datasets, optionally with a
    wavelength-parameterized first layer."""

    uses_spatial = True

    def __init__(self, bands: Optional[int], widths: Sequence[int] = (7, 28, 52),
                 hyve: bool = False, wavelength_range: Optional[Tuple[float, float]] = None,
                 components: int = 5):
        super().__init__()
        self.hyve = hyve
        self.feature_dim = widths[-1]
        if hyve:
            if wavelength_range is None:
                raise ValidationError("wavelength-parameterized layer needs a range")
            self.camera_agnostic = True
            self.first = WavelengthConv(widths[0], 3, wavelength_range,
                                        components=components, padding=1)
        else:
            if bands is None:
                raise ValidationError("channel convolution needs a band count")
            self.expected_bands = bands
            self.first = nn.Conv2d(bands, widths[0], 3, padding=1)
        stages = []
        for c_in, c_out in zip(widths[:-1], widths[1:]):
            stages += [
                nn.MaxPool2d(2, ceil_mode=True),
                nn.Conv2d(c_in, c_out, 3, padding=1),
                nn.BatchNorm2d(c_out), nn.ReLU(inplace=True),
            ]
        self.stages = nn.Sequential(*stages)
        self.first_norm = nn.BatchNorm2d(widths[0])
        self.act = nn.ReLU(inplace=True)

    def forward(self, x, grid: Optional[WavelengthGrid] = None):
        self.check_input(x)
        if self.hyve:
            if grid is None:
                raise ValidationError("camera-agnostic backbone needs the wavelength grid")
            h = self.first(x, grid)
        else:
            h = self.first(x)
        h = self.act(self.first_norm(h))
        h = self.stages(h)
        return h.mean(dim=(2, 3))
