"""Input preprocessing: per-band standardization, PCA, spectral mean and
center-pixel extraction.

The stateful modes (``raw`` standardization and ``pca``) are fitted on
training pixels only and exposed through a scikit-learn style transformer so
the preprocessing stage composes with the wider ecosystem. The stateless
modes (``spectral_mean``, ``center_pixel``) operate on raw intensities.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, List, Optional, Tuple

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .cube import HyperspectralCube, PreprocessSpec, ValidationError


def gather_training_pixels(cube: HyperspectralCube, train_coords: np.ndarray) -> np.ndarray:
    """Spectra of the given (x, y) coordinates as an (n, bands) matrix."""
    coords = np.asarray(train_coords)
    if coords.size == 0:
        raise ValidationError("no training pixels")
    return cube.data[coords[:, 0], coords[:, 1], :].astype(np.float64)


def compute_channel_stats(pixels: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Per-band mean and standard deviation of a training pixel matrix.

    Bands with exactly zero variance get a standard deviation of 1 so that
    standardization passes constants through after centering.
    """
    pixels = np.asarray(pixels, dtype=np.float64)
    if pixels.ndim != 2 or pixels.shape[0] == 0:
        raise ValidationError("no training pixels")
    mean = pixels.mean(axis=0)
    std = pixels.std(axis=0)
    std = np.where(std == 0.0, 1.0, std)
    return mean, std


def fit_pca(pixels: np.ndarray, k: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Principal component basis of the training pixels.

    Returns ``(basis, mean, explained_variance)`` where ``basis`` has one
    orthonormal column per component, in order of non-increasing explained
    variance. Component signs are fixed so the largest-magnitude entry of
    each column is positive, which keeps the basis deterministic.
    """
    pixels = np.asarray(pixels, dtype=np.float64)
    n, bands = pixels.shape
    if k < 1:
        raise ValidationError("component count must be positive")
    if k > bands:
        raise ValidationError(f"pca components ({k}) exceed cube bands ({bands})")
    if n < k:
        raise ValidationError(f"insufficient samples: {n} pixels for {k} components")
    mean = pixels.mean(axis=0)
    centered = pixels - mean
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    basis = vt[:k].T.copy()
    flip = np.sign(basis[np.argmax(np.abs(basis), axis=0), np.arange(k)])
    flip[flip == 0] = 1.0
    basis *= flip
    explained = (s[:k] ** 2) / max(n, 1)
    return basis, mean, explained


class CubePreprocessor(BaseEstimator, TransformerMixin):
    """Fit/transform-separated preprocessing of hyperspectral cubes.

    Parameters follow :class:`~hsibench.cube.PreprocessSpec`: ``mode`` is one
    of raw / pca / spectral_mean / center_pixel and ``components`` is the PCA
    target dimensionality. ``fit`` consumes a training pixel matrix
    (n x bands); ``transform`` consumes a cube and returns a new cube with
    the transformed band axis. Both stateless modes accept unfitted use.
    """

    def __init__(self, mode: str = "raw", components: Optional[int] = None):
        self.mode = mode
        self.components = components

    def _spec(self) -> PreprocessSpec:
        return PreprocessSpec(self.mode, self.components)

    @property
    def needs_fit(self) -> bool:
        return self.mode in ("raw", "pca")

    def fit(self, X, y=None):
        spec = self._spec()
        if not self.needs_fit:
            self.n_bands_in_ = None
            return self
        pixels = np.asarray(X, dtype=np.float64)
        if pixels.ndim != 2:
            raise ValidationError("fit expects an (n, bands) training pixel matrix")
        self.n_bands_in_ = pixels.shape[1]
        self.mean_, self.std_ = compute_channel_stats(pixels)
        if spec.mode == "pca":
            spec.output_bands(pixels.shape[1])
            self.basis_, self.pca_mean_, self.explained_variance_ = fit_pca(
                pixels, spec.components
            )
        return self

    def _check_fitted(self):
        if self.needs_fit and not hasattr(self, "mean_"):
            raise NotFittedError(
                f"{self.mode!r} preprocessing must be fitted on training pixels first"
            )

    def transform_pixels(self, pixels: np.ndarray) -> np.ndarray:
        """Transform an (n, bands) spectra matrix (raw / pca modes)."""
        self._check_fitted()
        pixels = np.asarray(pixels, dtype=np.float64)
        if self.mode == "raw":
            return (pixels - self.mean_) / self.std_
        if self.mode == "pca":
            return (pixels - self.pca_mean_) @ self.basis_
        if self.mode == "spectral_mean":
            return pixels.mean(axis=1, keepdims=True)
        raise ValidationError("center_pixel mode operates on cubes, not pixel matrices")

    def transform(self, cube: HyperspectralCube) -> np.ndarray:
        """Transformed data array for a cube; spatial layout is preserved
        except in center_pixel mode, which collapses it to 1x1."""
        self._check_fitted()
        data = cube.data.astype(np.float64)
        x, y, bands = data.shape
        if self.mode == "center_pixel":
            return data[x // 2 : x // 2 + 1, y // 2 : y // 2 + 1, :]
        if self.mode == "spectral_mean":
            return data.mean(axis=2, keepdims=True)
        if self.needs_fit and bands != self.n_bands_in_:
            raise ValidationError(
                f"cube has {bands} bands but preprocessing was fitted on {self.n_bands_in_}"
            )
        flat = self.transform_pixels(data.reshape(-1, bands))
        return flat.reshape(x, y, -1)

    def inverse_pca(self, projected: np.ndarray) -> np.ndarray:
        """Back-project PCA scores onto the original (centered) band axis."""
        self._check_fitted()
        if self.mode != "pca":
            raise ValidationError("inverse_pca is only defined for pca mode")
        return np.asarray(projected) @ self.basis_.T


def preprocessor_for(spec: PreprocessSpec) -> CubePreprocessor:
    return CubePreprocessor(mode=spec.mode, components=spec.components)
