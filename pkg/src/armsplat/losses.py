"""Training objective: photometric loss, binding regularizers, curve smoothness."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .metrics import ssim_with_grad
from .refiner import BezierResidual, velocity_weights


@dataclass(frozen=True)
class LossWeights:
    ssim_mix: float = 0.2
    pos: float = 0.01
    pos_threshold: float = 1.0
    scale: float = 1.0
    scale_threshold: float = 0.6
    vel: float = 0.001

    def __post_init__(self):
        for name in ("ssim_mix", "pos", "pos_threshold", "scale", "scale_threshold", "vel"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.ssim_mix > 1:
            raise ValueError("ssim_mix must lie in [0, 1]")


def loss_rgb(rendered, target, mask=None, ssim_mix: float = 0.2, target_moments=None):
    """``(1 - λ) L1 + λ (1 - SSIM) / 2`` over the pixels selected by ``mask``.

    Returns ``(value, grad)`` with ``grad`` shaped like ``rendered``. Pass
    ``metrics.target_moments(target)`` when the same target is reused.
    """
    x = np.asarray(getattr(rendered, "pixels", rendered), dtype=np.float64)
    y = np.asarray(getattr(target, "pixels", target), dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"image shapes differ: {x.shape} vs {y.shape}")
    w = np.ones(x.shape[:2]) if mask is None else np.asarray(mask, dtype=np.float64)
    if w.shape != x.shape[:2]:
        raise ValueError("mask shape does not match the image")
    norm = w.sum() * x.shape[2]
    if norm <= 0:
        raise ValueError("mask selects no pixels")
    diff = x - y
    l1 = float(np.sum(w[..., None] * np.abs(diff)) / norm)
    grad = (1.0 - ssim_mix) * w[..., None] * np.sign(diff) / norm
    value = (1.0 - ssim_mix) * l1
    if ssim_mix > 0:
        s, g_s = ssim_with_grad(x, y, w, target_moments)
        value += ssim_mix * (1.0 - s) / 2.0
        grad = grad - 0.5 * ssim_mix * g_s
    return value, grad


def _hinge_sq(values: np.ndarray, threshold: float):
    excess = np.maximum(np.abs(values) - threshold, 0.0)
    n = max(values.size, 1)
    return float(np.sum(excess**2) / n), 2.0 * excess * np.sign(values) / n


def loss_pos(mu: np.ndarray, threshold: float = 1.0):
    """Mean over Gaussians and axes of ``max(|mu| - ε, 0)^2`` and its gradient."""
    return _hinge_sq(np.asarray(mu, dtype=np.float64), threshold)


def loss_scale(log_scale: np.ndarray, threshold: float = 0.6):
    """Same hinge on the local scale ``exp(s)``; gradient is w.r.t. ``s``."""
    s = np.asarray(log_scale, dtype=np.float64)
    scale = np.exp(s)
    value, g = _hinge_sq(scale, threshold)
    return value, g * scale


def loss_velocity(curve: BezierResidual, times, h: float):
    """Mean squared norm of the curve velocity over ``times``; grad w.r.t. control points."""
    times = np.atleast_1d(np.asarray(times, dtype=np.float64))
    if np.any((times < 0) | (times > 1)):
        raise ValueError("times must lie in [0, 1]")
    grad = np.zeros_like(curve.control_points)
    value = 0.0
    for t in times:
        w = velocity_weights(curve.degree, curve.omega, float(t), h)
        v = w @ curve.control_points
        value += float(v @ v)
        grad += 2.0 * np.outer(w, v)
    return value / len(times), grad / len(times)


def total_loss(parts, weights: LossWeights = LossWeights()) -> float:
    """``L_rgb + λ_pos L_pos + λ_scale L_scale + λ_vel L_vel``."""
    rgb, pos, scale, vel = parts
    return rgb + weights.pos * pos + weights.scale * scale + weights.vel * vel
