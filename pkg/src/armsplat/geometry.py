"""Rigid-body and curve mathematics shared by the whole pipeline.

Conventions used throughout the package:

* quaternions are stored ``(w, x, y, z)``;
* rotations act on column vectors, ``p' = R @ p``;
* a 6D rotation vector holds the first two *columns* of the matrix;
* everything is float64.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import comb

__all__ = [
    "SingularityError",
    "Rigid3",
    "bernstein_basis",
    "bernstein_matrix",
    "bezier_eval",
    "rotation_from_6d",
    "rotation_from_6d_backward",
    "rotation_to_6d",
    "rigid_compose",
    "quat_normalize",
    "quat_to_matrix",
    "quat_to_matrix_backward",
    "matrix_to_quat",
    "quaternion_rotate",
    "axis_angle_matrix",
    "rpy_matrix",
    "skew",
]

IDENTITY_6D = np.array([1.0, 0.0, 0.0, 0.0, 1.0, 0.0])


class SingularityError(ValueError):
    """Raised when a geometric construction degenerates (zero norm, parallel axes)."""


@dataclass(frozen=True, eq=False)
class Rigid3:
    """Proper rigid transform ``p -> rotation @ p + translation``."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=np.float64).reshape(3, 3))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=np.float64).reshape(3))

    @classmethod
    def identity(cls) -> "Rigid3":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "Rigid3":
        m = np.asarray(m, dtype=np.float64)
        return cls(m[:3, :3], m[:3, 3])

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def inverse(self) -> "Rigid3":
        rt = self.rotation.T
        return Rigid3(rt, -rt @ self.translation)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform points of shape (..., 3)."""
        return np.asarray(points) @ self.rotation.T + self.translation

    def __matmul__(self, other: "Rigid3") -> "Rigid3":
        return rigid_compose(self, other)

    def is_valid(self, tol: float = 1e-9) -> bool:
        r = self.rotation
        return bool(
            np.all(np.isfinite(r))
            and np.all(np.isfinite(self.translation))
            and np.allclose(r.T @ r, np.eye(3), atol=tol, rtol=0)
            and abs(np.linalg.det(r) - 1.0) <= tol
        )

    def __repr__(self) -> str:
        return f"Rigid3(rotation={self.rotation.tolist()}, translation={self.translation.tolist()})"


def rigid_compose(a: Rigid3, b: Rigid3) -> Rigid3:
    """Return ``a ∘ b`` (apply ``b`` first)."""
    return Rigid3(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


# -- Bernstein / Bézier -------------------------------------------------------

def bernstein_basis(k: int, K: int, t: float) -> float:
    """Bernstein polynomial ``C(K, k) t^k (1 - t)^(K - k)``."""
    if K < 0 or not 0 <= k <= K:
        raise ValueError(f"basis index k={k} outside [0, {K}]")
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"curve parameter t={t} outside [0, 1]")
    return float(comb(K, k, exact=True) * t**k * (1.0 - t) ** (K - k))


def bernstein_matrix(K: int, t) -> np.ndarray:
    """All degree-K Bernstein weights at each ``t``; shape ``(len(t), K + 1)``."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    if np.any((t < 0.0) | (t > 1.0)):
        raise ValueError("curve parameter outside [0, 1]")
    k = np.arange(K + 1)
    binom = np.array([comb(K, i, exact=True) for i in k], dtype=np.float64)
    # 0**0 evaluates to 1 in numpy, which is the convention needed at the endpoints
    return binom * t[:, None] ** k * (1.0 - t[:, None]) ** (K - k)


def bezier_eval(points, t: float) -> np.ndarray:
    """Evaluate a Bézier curve with control points ``points`` (n, d) at ``t``."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] < 2:
        raise ValueError("a Bézier curve needs at least two control points")
    return bernstein_matrix(pts.shape[0] - 1, t)[0] @ pts


# -- rotations ----------------------------------------------------------------

def skew(v: np.ndarray) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def axis_angle_matrix(axis, angle: float) -> np.ndarray:
    """Rodrigues rotation about a unit ``axis``."""
    axis = np.asarray(axis, dtype=np.float64)
    k = skew(axis)
    return np.eye(3) + math.sin(angle) * k + (1.0 - math.cos(angle)) * (k @ k)


def rpy_matrix(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """Fixed-axis roll/pitch/yaw, ``Rz(yaw) @ Ry(pitch) @ Rx(roll)``."""
    cr, sr = math.cos(roll), math.sin(roll)
    cp, sp = math.cos(pitch), math.sin(pitch)
    cy, sy = math.cos(yaw), math.sin(yaw)
    rx = np.array([[1.0, 0.0, 0.0], [0.0, cr, -sr], [0.0, sr, cr]])
    ry = np.array([[cp, 0.0, sp], [0.0, 1.0, 0.0], [-sp, 0.0, cp]])
    rz = np.array([[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]])
    return rz @ ry @ rx


def rotation_from_6d(r6) -> np.ndarray:
    """Gram-Schmidt map from two 3-vectors to a rotation; works on (..., 6)."""
    r6 = np.asarray(r6, dtype=np.float64)
    a1, a2 = r6[..., :3], r6[..., 3:]
    n1 = np.linalg.norm(a1, axis=-1, keepdims=True)
    if np.any(n1 <= 1e-12):
        raise SingularityError("first 6D column has (near) zero norm")
    b1 = a1 / n1
    u2 = a2 - np.sum(b1 * a2, axis=-1, keepdims=True) * b1
    n2 = np.linalg.norm(u2, axis=-1, keepdims=True)
    if np.any(n2 <= 1e-12):
        raise SingularityError("6D columns are (near) parallel")
    b2 = u2 / n2
    b3 = np.cross(b1, b2)
    return np.stack([b1, b2, b3], axis=-1)


def rotation_from_6d_backward(r6, grad_rot) -> np.ndarray:
    """Vector-Jacobian product of :func:`rotation_from_6d`."""
    r6 = np.asarray(r6, dtype=np.float64)
    g = np.asarray(grad_rot, dtype=np.float64)
    a1, a2 = r6[..., :3], r6[..., 3:]
    n1 = np.linalg.norm(a1, axis=-1, keepdims=True)
    b1 = a1 / n1
    d12 = np.sum(b1 * a2, axis=-1, keepdims=True)
    u2 = a2 - d12 * b1
    n2 = np.linalg.norm(u2, axis=-1, keepdims=True)
    b2 = u2 / n2
    g1, g2, g3 = g[..., :, 0], g[..., :, 1], g[..., :, 2]

    gb1 = g1 + np.cross(b2, g3)
    gb2 = g2 + np.cross(g3, b1)
    gu2 = (gb2 - b2 * np.sum(b2 * gb2, axis=-1, keepdims=True)) / n2
    ga2 = gu2 - b1 * np.sum(b1 * gu2, axis=-1, keepdims=True)
    gb1 = gb1 - d12 * gu2 - a2 * np.sum(b1 * gu2, axis=-1, keepdims=True)
    ga1 = (gb1 - b1 * np.sum(b1 * gb1, axis=-1, keepdims=True)) / n1
    return np.concatenate([ga1, ga2], axis=-1)


def rotation_to_6d(rot) -> np.ndarray:
    """First two columns of ``rot`` flattened as ``[col0, col1]``."""
    rot = np.asarray(rot, dtype=np.float64)
    return np.concatenate([rot[..., :, 0], rot[..., :, 1]], axis=-1)


def quat_normalize(q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def quat_to_matrix(q) -> np.ndarray:
    """Rotation matrix of a (not necessarily unit) quaternion; normalizes first."""
    w, x, y, z = np.moveaxis(quat_normalize(q), -1, 0)
    return np.stack(
        [
            np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], -1),
            np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], -1),
            np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], -1),
        ],
        axis=-2,
    )


def quat_to_matrix_backward(q, grad_rot) -> np.ndarray:
    """Gradient w.r.t. the raw quaternion given dL/dR, including normalization."""
    q = np.asarray(q, dtype=np.float64)
    g = np.asarray(grad_rot, dtype=np.float64)
    norm = np.linalg.norm(q, axis=-1, keepdims=True)
    w, x, y, z = np.moveaxis(q / norm, -1, 0)
    g00, g01, g02 = g[..., 0, 0], g[..., 0, 1], g[..., 0, 2]
    g10, g11, g12 = g[..., 1, 0], g[..., 1, 1], g[..., 1, 2]
    g20, g21, g22 = g[..., 2, 0], g[..., 2, 1], g[..., 2, 2]
    dw = 2 * (-z * g01 + y * g02 + z * g10 - x * g12 - y * g20 + x * g21)
    dx = 2 * (y * g01 + z * g02 + y * g10 - 2 * x * g11 - w * g12 + z * g20 + w * g21 - 2 * x * g22)
    dy = 2 * (-2 * y * g00 + x * g01 + w * g02 + x * g10 + z * g12 - w * g20 + z * g21 - 2 * y * g22)
    dz = 2 * (-2 * z * g00 - w * g01 + x * g02 + w * g10 - 2 * z * g11 + y * g12 + x * g20 + y * g21)
    gu = np.stack([dw, dx, dy, dz], axis=-1)
    u = q / norm
    return (gu - u * np.sum(u * gu, axis=-1, keepdims=True)) / norm


def matrix_to_quat(rot) -> np.ndarray:
    """Unit quaternion (w >= 0) of a rotation matrix; vectorized over (..., 3, 3)."""
    r = np.asarray(rot, dtype=np.float64)
    shape = r.shape[:-2]
    r = r.reshape(-1, 3, 3)
    m00, m11, m22 = r[:, 0, 0], r[:, 1, 1], r[:, 2, 2]
    # Shepperd: pick the largest of 4w^2, 4x^2, 4y^2, 4z^2 for stability
    cand = np.stack([1 + m00 + m11 + m22, 1 + m00 - m11 - m22, 1 - m00 + m11 - m22, 1 - m00 - m11 + m22], -1)
    pick = np.argmax(cand, axis=-1)
    s = np.sqrt(np.maximum(cand[np.arange(len(r)), pick], 1e-300)) * 2.0
    q = np.empty((len(r), 4))
    for case in range(4):
        m = pick == case
        if not np.any(m):
            continue
        rr, ss = r[m], s[m]
        if case == 0:
            q[m] = np.stack([0.25 * ss, (rr[:, 2, 1] - rr[:, 1, 2]) / ss, (rr[:, 0, 2] - rr[:, 2, 0]) / ss,
                             (rr[:, 1, 0] - rr[:, 0, 1]) / ss], -1)
        elif case == 1:
            q[m] = np.stack([(rr[:, 2, 1] - rr[:, 1, 2]) / ss, 0.25 * ss, (rr[:, 0, 1] + rr[:, 1, 0]) / ss,
                             (rr[:, 0, 2] + rr[:, 2, 0]) / ss], -1)
        elif case == 2:
            q[m] = np.stack([(rr[:, 0, 2] - rr[:, 2, 0]) / ss, (rr[:, 0, 1] + rr[:, 1, 0]) / ss, 0.25 * ss,
                             (rr[:, 1, 2] + rr[:, 2, 1]) / ss], -1)
        else:
            q[m] = np.stack([(rr[:, 1, 0] - rr[:, 0, 1]) / ss, (rr[:, 0, 2] + rr[:, 2, 0]) / ss,
                             (rr[:, 1, 2] + rr[:, 2, 1]) / ss, 0.25 * ss], -1)
    q = np.where(q[:, :1] < 0, -q, q)
    q = quat_normalize(q)
    return q.reshape(*shape, 4)


def quaternion_rotate(frame_rotation, q) -> np.ndarray:
    """Quaternion of ``frame_rotation @ matrix(q)``."""
    return matrix_to_quat(np.asarray(frame_rotation) @ quat_to_matrix(q))
