"""Camera-agnostic first convolution layer.

Instead of one learned weight per input channel, each filter carries a small
Gaussian mixture over normalized wavelength position. The per-band kernel is
the mixture evaluated at that band's wavelength times a learned spatial tap
matrix per mixture component, so the same parameters produce a valid kernel
for any camera whose wavelengths fall inside the layer's declared range:

    weight[f, b] = sum_g exp(-(t_b - mu[f,g])^2 / (2 sigma[f,g]^2)) * taps[f,g]

with t_b the band position normalized into [0, 1] by the wavelength range.
Everything is differentiable in mu, sigma and the taps.
"""

from __future__ import annotations

import math
from typing import Optional, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..cube import ValidationError, WavelengthGrid

SIGMA_MIN = 0.01
DEFAULT_COMPONENTS = 5
SIGMA_INIT = 0.2


class WavelengthConv(nn.Module):
    """2-D convolution whose input-channel axis is generated from wavelengths."""

    def __init__(self, out_channels: int, kernel_size: int,
                 wavelength_range: Tuple[float, float],
                 components: int = DEFAULT_COMPONENTS,
                 stride: int = 1, padding: int = 0, bias: bool = True):
        super().__init__()
        lo, hi = wavelength_range
        if not lo < hi:
            raise ValidationError(f"invalid wavelength range {wavelength_range}")
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.components = components
        self.stride = stride
        self.padding = padding
        self.wavelength_range = (float(lo), float(hi))
        # One shared ladder of component positions; the taps differentiate filters.
        centers = torch.linspace(0.0, 1.0, components).repeat(out_channels, 1)
        self.centers = nn.Parameter(centers)
        self.widths = nn.Parameter(torch.full((out_channels, components), SIGMA_INIT))
        bound = 1.0 / math.sqrt(components * kernel_size * kernel_size)
        taps = torch.empty(out_channels, components, kernel_size, kernel_size)
        nn.init.uniform_(taps, -bound, bound)
        self.taps = nn.Parameter(taps)
        self.bias = nn.Parameter(torch.zeros(out_channels)) if bias else None

    def normalized_positions(self, grid: WavelengthGrid) -> torch.Tensor:
        lo, hi = self.wavelength_range
        wl = torch.as_tensor(grid.as_array, dtype=self.centers.dtype,
                             device=self.centers.device)
        outside = [float(w) for w in grid.wavelengths_nm if w < lo or w > hi]
        if outside:
            raise ValidationError(
                f"wavelengths outside layer range [{lo}, {hi}] nm: "
                + ", ".join(f"{w:g}" for w in outside[:5])
            )
        return (wl - lo) / (hi - lo)

    def kernel(self, grid: WavelengthGrid) -> torch.Tensor:
        """Convolution weight of shape (filters, bands, k, k) for this grid."""
        t = self.normalized_positions(grid)  # (B,)
        sigma = self.widths.clamp(min=SIGMA_MIN)
        gauss = torch.exp(
            -((t[None, None, :] - self.centers[:, :, None]) ** 2)
            / (2.0 * sigma[:, :, None] ** 2)
        )  # (F, G, B)
        return torch.einsum("fgb,fgij->fbij", gauss, self.taps)

    def forward(self, x: torch.Tensor, grid: WavelengthGrid) -> torch.Tensor:
        if x.shape[1] != len(grid):
            raise ValidationError(
                f"input has {x.shape[1]} bands but grid lists {len(grid)}"
            )
        weight = self.kernel(grid).to(x.dtype)
        bias = self.bias.to(x.dtype) if self.bias is not None else None
        return F.conv2d(x, weight, bias, stride=self.stride, padding=self.padding)

    def extra_repr(self) -> str:
        lo, hi = self.wavelength_range
        return (f"out_channels={self.out_channels}, kernel_size={self.kernel_size}, "
                f"components={self.components}, range=({lo:g}, {hi:g}) nm")


def wavelength_conv_weights(conv: WavelengthConv, grid: WavelengthGrid) -> torch.Tensor:
    """The generated kernel for a grid (differentiable w.r.t. the layer)."""
    return conv.kernel(grid)
