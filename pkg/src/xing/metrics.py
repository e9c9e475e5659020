"""Structural similarity (SSIM) on [-1, 1] images.

The classic Wang et al. formulation: Gaussian-weighted local statistics over
valid (unpadded) window positions, with the luminance/contrast/structure
product collapsed into the familiar two-factor form. Operates on plain
numpy arrays (or Tensors, via their ``.data``); evaluation never needs
gradients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import ContractError, ShapeError, Tensor

__all__ = ["SsimConfig", "ssim"]


@dataclass(frozen=True)
class SsimConfig:
    window: int = 11
    sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    data_range: float = 2.0

    def __post_init__(self):
        if self.window < 3 or self.window % 2 == 0:
            raise ContractError(f"window must be odd and >= 3, got {self.window}")
        if self.k1 <= 0 or self.k2 <= 0:
            raise ContractError("k1 and k2 must be positive")
        if self.sigma <= 0 or self.data_range <= 0:
            raise ContractError("sigma and data_range must be positive")


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    half = (size - 1) / 2.0
    coords = np.arange(size) - half
    g = np.exp(-0.5 * (coords / sigma) ** 2)
    win = np.outer(g, g)
    return win / win.sum()


def _as_array(x) -> np.ndarray:
    if isinstance(x, Tensor):
        x = x.data
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise ShapeError(f"ssim: need [c,h,w] or [h,w] images, got shape {arr.shape}")
    return arr


def _windowed_mean(img: np.ndarray, win: np.ndarray) -> np.ndarray:
    # img [c,h,w] -> Gaussian-weighted window means [c,oh,ow]
    k = win.shape[0]
    view = np.lib.stride_tricks.sliding_window_view(img, (k, k), axis=(1, 2))
    return np.tensordot(view, win, axes=([3, 4], [0, 1]))


def ssim(x, y, cfg: SsimConfig | None = None) -> float:
    """Mean SSIM over channels and valid window positions; in [-1, 1]."""
    cfg = cfg or SsimConfig()
    xa, ya = _as_array(x), _as_array(y)
    if xa.shape != ya.shape:
        raise ShapeError(f"ssim: shape mismatch {xa.shape} vs {ya.shape}")
    c, h, w = xa.shape
    if h < cfg.window or w < cfg.window:
        raise ContractError(
            f"ssim: image {h}x{w} smaller than the {cfg.window}x{cfg.window} window"
        )
    win = _gaussian_window(cfg.window, cfg.sigma)
    c1 = (cfg.k1 * cfg.data_range) ** 2
    c2 = (cfg.k2 * cfg.data_range) ** 2

    mu_x = _windowed_mean(xa, win)
    mu_y = _windowed_mean(ya, win)
    # E[ab] - E[a]E[b] moments; identical expressions for both inputs keep
    # ssim(x, x) at exactly 1.0.
    var_x = _windowed_mean(xa * xa, win) - mu_x * mu_x
    var_y = _windowed_mean(ya * ya, win) - mu_y * mu_y
    cov = _windowed_mean(xa * ya, win) - mu_x * mu_y

    num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    return float(np.mean(num / den))
