"""Image quality metrics: PSNR and SSIM (11x11 Gaussian window, sigma 1.5).

SSIM statistics use zero padding so the map has the image's size; the same
definition backs both the evaluation metric and the training D-SSIM term.
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np

from ._kernels import ssim_target_moments, ssim_value_grad

PSNR_CAP = 100.0
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2
WINDOW = 11
SIGMA = 1.5


def gaussian_window(size: int = WINDOW, sigma: float = SIGMA) -> np.ndarray:
    x = np.arange(size) - size // 2
    g = np.exp(-(x**2) / (2.0 * sigma**2))
    return g / g.sum()


_G1 = gaussian_window()


@lru_cache(maxsize=16)
def _band(n: int) -> np.ndarray:
    """(n, n) matrix applying the 1-D window with zero padding; rows are outputs."""
    half = WINDOW // 2
    offset = np.arange(n)[None, :] - np.arange(n)[:, None]
    band = np.where(np.abs(offset) <= half, _G1[np.clip(offset + half, 0, WINDOW - 1)], 0.0)
    band.setflags(write=False)
    return band


def _filter(planes: np.ndarray) -> np.ndarray:
    """Separable window over the two trailing axes of a stack of (H, W) planes."""
    h, w = planes.shape[-2:]
    rows = planes.reshape(-1, w) @ _band(w).T
    return (_band(h) @ rows.reshape(-1, h, w)).reshape(planes.shape)


def _as_hwc(img) -> np.ndarray:
    arr = np.asarray(getattr(img, "pixels", img), dtype=np.float64)
    return arr[..., None] if arr.ndim == 2 else arr


def _check_pair(a, b):
    a, b = _as_hwc(a), _as_hwc(b)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b) -> float:
    """PSNR in dB for images in [0, 1]; capped at 100 dB."""
    a, b = _check_pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse < 1e-10:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(1.0 / mse))


def _planes(img: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(np.moveaxis(img, -1, 0))


def _moments(x: np.ndarray, y: np.ndarray):
    """Window means, variances and covariance of channel-first images."""
    mu_x, mu_y, xx, yy, xy = _filter(np.stack([x, y, x * x, y * y, x * y]))
    return mu_x, mu_y, xx - mu_x**2, yy - mu_y**2, xy - mu_x * mu_y


def ssim_map(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Per-pixel SSIM of two (H, W, C) images."""
    mu_x, mu_y, sxx, syy, sxy = _moments(_planes(x), _planes(y))
    smap = ((2 * mu_x * mu_y + SSIM_C1) * (2 * sxy + SSIM_C2)) / (
        (mu_x**2 + mu_y**2 + SSIM_C1) * (sxx + syy + SSIM_C2))
    return np.moveaxis(smap, 0, -1)


def target_moments(y: np.ndarray) -> np.ndarray:
    """Precomputed window statistics of a fixed SSIM reference image."""
    return ssim_target_moments(_planes(_as_hwc(y)), _G1)


def ssim_with_grad(x: np.ndarray, y: np.ndarray, weights: np.ndarray | None = None,
                   y_moments: np.ndarray | None = None):
    """Weighted mean SSIM over pixels and channels, and its gradient w.r.t. ``x``.

    ``weights`` (H, W) selects which pixel positions enter the average.
    ``y_moments`` from :func:`target_moments` skips recomputing the reference side.
    """
    x, y = _check_pair(x, y)
    w = np.ones(x.shape[:2]) if weights is None else np.asarray(weights, dtype=np.float64)
    m = w / (w.sum() * x.shape[2])
    yp = _planes(y)
    if y_moments is None:
        y_moments = ssim_target_moments(yp, _G1)
    value, grad = ssim_value_grad(_planes(x), yp, y_moments, m, _G1, SSIM_C1, SSIM_C2)
    return float(value), np.moveaxis(grad, 0, -1)


def ssim(a, b) -> float:
    """Mean SSIM over pixels and channels, in [-1, 1]."""
    a, b = _check_pair(a, b)
    return float(np.mean(ssim_map(a, b)))
