"""Bézier residual motion refiner.

A single global Bézier curve over 9D residuals (translation + 6D rotation)
adds a smooth time-varying correction to every moving link, and a static 9D
embedding per moving joint adds a constant one:

    T_final(link, t) = T_FK(link) ∘ T_curve(t) ∘ T_embed(actuating joint)

Both residuals are zero at construction, which maps to the identity because
the 6D part is anchored at the identity rotation before Gram-Schmidt.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .geometry import (
    IDENTITY_6D,
    Rigid3,
    bernstein_matrix,
    rigid_compose,
    rotation_from_6d,
    rotation_from_6d_backward,
)
from .urdf import KinematicModel, forward_kinematics, moving_joints

DEFAULT_DEGREE = 19
DEFAULT_OMEGA = 0.1


@dataclass(eq=False)
class BezierResidual:
    control_points: np.ndarray  # (K + 1, 9)
    omega: float = DEFAULT_OMEGA

    def __post_init__(self):
        self.control_points = np.asarray(self.control_points, dtype=np.float64)
        if self.control_points.ndim != 2 or self.control_points.shape[1] != 9:
            raise ValueError("control points must have shape (K + 1, 9)")
        if self.control_points.shape[0] < 2:
            raise ValueError("need K >= 1")
        if self.omega < 0:
            raise ValueError("omega must be nonnegative")

    @classmethod
    def zeros(cls, degree: int = DEFAULT_DEGREE, omega: float = DEFAULT_OMEGA) -> "BezierResidual":
        return cls(np.zeros((degree + 1, 9)), omega)

    @property
    def degree(self) -> int:
        return self.control_points.shape[0] - 1


@dataclass(eq=False)
class JointEmbeddings:
    names: tuple[str, ...]
    values: np.ndarray  # (J, 9)

    @classmethod
    def zeros(cls, model: KinematicModel) -> "JointEmbeddings":
        names = tuple(moving_joints(model))
        return cls(names, np.zeros((len(names), 9)))

    def __getitem__(self, name: str) -> np.ndarray:
        return self.values[self.names.index(name)]

    def as_dict(self) -> dict[str, np.ndarray]:
        return {n: self.values[i].copy() for i, n in enumerate(self.names)}


def residual_at(curve: BezierResidual, t: float) -> np.ndarray:
    """ω-scaled Bernstein-weighted sum of the control points."""
    return curve.omega * (bernstein_matrix(curve.degree, t)[0] @ curve.control_points)


def residual_rigid_arrays(delta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Rotation and translation for residuals of shape (..., 9)."""
    delta = np.asarray(delta, dtype=np.float64)
    if not np.all(np.isfinite(delta)):
        raise ValueError("non-finite residual")
    return rotation_from_6d(delta[..., 3:] + IDENTITY_6D), delta[..., :3].copy()


def residual_rigid_backward(delta: np.ndarray, grad_rot: np.ndarray, grad_trans: np.ndarray) -> np.ndarray:
    delta = np.asarray(delta, dtype=np.float64)
    g6 = rotation_from_6d_backward(delta[..., 3:] + IDENTITY_6D, grad_rot)
    return np.concatenate([grad_trans, g6], axis=-1)


def residual_to_rigid(delta) -> Rigid3:
    rot, trans = residual_rigid_arrays(delta)
    return Rigid3(rot, trans)


def refine_pose(fk_pose: Rigid3, t: float, curve: BezierResidual, embedding) -> Rigid3:
    """``fk_pose ∘ T_curve(t) ∘ T_embed``."""
    return rigid_compose(rigid_compose(fk_pose, residual_to_rigid(residual_at(curve, t))), residual_to_rigid(embedding))


def velocity_weights(degree: int, omega: float, t: float, h: float) -> np.ndarray:
    """Weights ``w`` with velocity = ``w @ control_points`` for the clipped central difference."""
    if h <= 0:
        raise ValueError("step h must be positive")
    lo, hi = max(t - h, 0.0), min(t + h, 1.0)
    b = bernstein_matrix(degree, [lo, hi])
    return omega * (b[1] - b[0]) / (hi - lo)


def bezier_velocity(curve: BezierResidual, t: float, h: float) -> np.ndarray:
    """Finite-difference velocity of the residual curve at ``t``.

    Central over ``[t - h, t + h]`` clipped to ``[0, 1]``, which degrades to a
    one-sided difference at the ends.
    """
    return velocity_weights(curve.degree, curve.omega, t, h) @ curve.control_points


def bezier_derivative(curve: BezierResidual, t: float) -> np.ndarray:
    """Exact derivative ``ω Σ K (p_{k+1} - p_k) B_k^{K-1}(t)``."""
    p = curve.control_points
    k = curve.degree
    return curve.omega * k * (bernstein_matrix(k - 1, t)[0] @ (p[1:] - p[:-1]))


# -- articulated composition --------------------------------------------------

def actuating_indices(model: KinematicModel, links: Sequence[str], joint_names: Sequence[str]) -> np.ndarray:
    """Index of each link's actuating joint in ``joint_names`` (-1 for the fixed base)."""
    out = []
    for link in links:
        joint = model.actuating_joint(link)
        out.append(-1 if joint is None else list(joint_names).index(joint))
    return np.array(out, dtype=np.int64)


@dataclass(eq=False)
class RefinedPoses:
    """Refined per-link poses plus what the backward pass needs."""

    rotations: np.ndarray  # (L, 3, 3)
    translations: np.ndarray  # (L, 3)
    fk_rotations: np.ndarray
    fk_translations: np.ndarray
    actuator: np.ndarray  # (L,)
    curve_weights: np.ndarray  # (K + 1,) ω B(t)
    curve_delta: np.ndarray  # (9,)
    curve_rot: np.ndarray
    curve_trans: np.ndarray
    embed_rot: np.ndarray  # (J, 3, 3)
    embed_trans: np.ndarray  # (J, 3)


def refine_link_arrays(fk_rotations: np.ndarray, fk_translations: np.ndarray, actuator: np.ndarray,
                       t: float, curve: BezierResidual, embeddings: np.ndarray) -> RefinedPoses:
    """Vectorized refinement over links given their FK poses."""
    weights = curve.omega * bernstein_matrix(curve.degree, t)[0]
    delta = weights @ curve.control_points
    rb, tb = residual_rigid_arrays(delta)
    if len(embeddings):
        re, te = residual_rigid_arrays(embeddings)
    else:
        re, te = np.zeros((0, 3, 3)), np.zeros((0, 3))

    rot = fk_rotations.copy()
    trans = fk_translations.copy()
    moving = actuator >= 0
    if np.any(moving):
        j = actuator[moving]
        rfk = fk_rotations[moving]
        rfb = rfk @ rb
        rot[moving] = rfb @ re[j]
        trans[moving] = np.einsum("lij,lj->li", rfb, te[j]) + rfk @ tb + fk_translations[moving]
    return RefinedPoses(rot, trans, fk_rotations, fk_translations, actuator, weights, delta, rb, tb, re, te)


def refine_link_arrays_backward(state: RefinedPoses, curve: BezierResidual, embeddings: np.ndarray,
                                grad_rot: np.ndarray, grad_trans: np.ndarray):
    """Gradients w.r.t. (control points, embeddings)."""
    g_cp = np.zeros_like(curve.control_points)
    g_emb = np.zeros_like(embeddings)
    moving = state.actuator >= 0
    if not np.any(moving):
        return g_cp, g_emb
    j = state.actuator[moving]
    rfk = state.fk_rotations[moving]
    gr = grad_rot[moving]
    gt = grad_trans[moving]
    re, te = state.embed_rot[j], state.embed_trans[j]

    rfk_t = np.swapaxes(rfk, 1, 2)
    g_rb = np.sum(rfk_t @ (gr @ np.swapaxes(re, 1, 2) + gt[:, :, None] * te[:, None, :]), axis=0)
    g_tb = np.sum(np.einsum("lji,lj->li", rfk, gt), axis=0)
    rfb_t = np.swapaxes(rfk @ state.curve_rot, 1, 2)
    g_re = rfb_t @ gr
    g_te = np.einsum("lij,lj->li", rfb_t, gt)

    g_delta = residual_rigid_backward(state.curve_delta, g_rb, g_tb)
    g_cp = np.outer(state.curve_weights, g_delta)
    g_e_links = residual_rigid_backward(embeddings[j], g_re, g_te)
    np.add.at(g_emb, j, g_e_links)
    return g_cp, g_emb


def refined_link_poses(model: KinematicModel, config: Mapping[str, float], t: float,
                       curve: BezierResidual, embeddings: JointEmbeddings) -> dict[str, Rigid3]:
    """Refined world pose of every link of ``model``."""
    fk = forward_kinematics(model, config)
    links = model.link_names
    actuator = actuating_indices(model, links, embeddings.names)
    state = refine_link_arrays(
        np.stack([fk[n].rotation for n in links]),
        np.stack([fk[n].translation for n in links]),
        actuator, t, curve, embeddings.values,
    )
    return {n: Rigid3(state.rotations[i], state.translations[i]) for i, n in enumerate(links)}
