"""Real spherical harmonics up to degree 3 (graphics sign convention)."""

from __future__ import annotations

import numpy as np

C0 = 0.28209479177387814
C1 = 0.4886025119029199
C2 = (1.0925484305920792, -1.0925484305920792, 0.31539156525252005, -1.0925484305920792, 0.5462742152960396)
C3 = (-0.5900435899266435, 2.890611442640554, -0.4570457994644658, 0.3731763325901154,
      -0.4570457994644658, 1.445305721320277, -0.5900435899266435)


def sh_basis(dirs: np.ndarray, degree: int) -> np.ndarray:
    """Basis values (N, (degree+1)^2) at unit directions (N, 3)."""
    x, y, z = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    cols = [np.full_like(x, C0)]
    if degree >= 1:
        cols += [-C1 * y, C1 * z, -C1 * x]
    if degree >= 2:
        xx, yy, zz = x * x, y * y, z * z
        cols += [C2[0] * x * y, C2[1] * y * z, C2[2] * (2 * zz - xx - yy), C2[3] * x * z, C2[4] * (xx - yy)]
    if degree >= 3:
        cols += [
            C3[0] * y * (3 * xx - yy),
            C3[1] * x * y * z,
            C3[2] * y * (4 * zz - xx - yy),
            C3[3] * z * (2 * zz - 3 * xx - 3 * yy),
            C3[4] * x * (4 * zz - xx - yy),
            C3[5] * z * (xx - yy),
            C3[6] * x * (xx - 3 * yy),
        ]
    return np.stack(cols, axis=1)


def sh_basis_jacobian(dirs: np.ndarray, degree: int) -> np.ndarray:
    """d basis / d direction, shape (N, (degree+1)^2, 3)."""
    x, y, z = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    o = np.zeros_like(x)
    rows = [(o, o, o)]
    if degree >= 1:
        rows += [(o, o - C1, o), (o, o, o + C1), (o - C1, o, o)]
    if degree >= 2:
        rows += [
            (C2[0] * y, C2[0] * x, o),
            (o, C2[1] * z, C2[1] * y),
            (-2 * C2[2] * x, -2 * C2[2] * y, 4 * C2[2] * z),
            (C2[3] * z, o, C2[3] * x),
            (2 * C2[4] * x, -2 * C2[4] * y, o),
        ]
    if degree >= 3:
        xx, yy, zz = x * x, y * y, z * z
        rows += [
            (6 * C3[0] * x * y, C3[0] * (3 * xx - 3 * yy), o),
            (C3[1] * y * z, C3[1] * x * z, C3[1] * x * y),
            (-2 * C3[2] * x * y, C3[2] * (4 * zz - xx - 3 * yy), 8 * C3[2] * y * z),
            (-6 * C3[3] * x * z, -6 * C3[3] * y * z, C3[3] * (6 * zz - 3 * xx - 3 * yy)),
            (C3[4] * (4 * zz - 3 * xx - yy), -2 * C3[4] * x * y, 8 * C3[4] * x * z),
            (2 * C3[5] * x * z, -2 * C3[5] * y * z, C3[5] * (xx - yy)),
            (C3[6] * (3 * xx - 3 * yy), -6 * C3[6] * x * y, o),
        ]
    return np.stack([np.stack(r, axis=-1) for r in rows], axis=1)


def degree_of(coeffs: np.ndarray) -> int:
    n = coeffs.shape[-2]
    degree = int(round(np.sqrt(n))) - 1
    if (degree + 1) ** 2 != n or not 0 <= degree <= 3:
        raise ValueError(f"{n} SH coefficients do not form a degree 0..3 set")
    return degree


def sh_to_rgb(coeffs: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    """Colors (N, 3) from coefficients (N, B, 3) and unit view directions (N, 3)."""
    basis = sh_basis(dirs, degree_of(coeffs))
    return np.maximum(np.einsum("nb,nbc->nc", basis, coeffs) + 0.5, 0.0)


def sh_to_rgb_backward(coeffs: np.ndarray, dirs: np.ndarray, grad_rgb: np.ndarray):
    """Gradients w.r.t. coefficients and (unit) directions."""
    degree = degree_of(coeffs)
    basis = sh_basis(dirs, degree)
    raw = np.einsum("nb,nbc->nc", basis, coeffs) + 0.5
    g = np.where(raw >= 0.0, grad_rgb, 0.0)
    g_coeffs = basis[:, :, None] * g[:, None, :]
    if degree == 0:
        return g_coeffs, np.zeros_like(dirs)
    g_basis = np.einsum("nbc,nc->nb", coeffs, g)
    g_dirs = np.einsum("nb,nbk->nk", g_basis, sh_basis_jacobian(dirs, degree))
    return g_coeffs, g_dirs


def evaluate_sh(coeffs, direction) -> np.ndarray:
    """RGB of one Gaussian with coefficients ((d+1)^2, 3) seen along ``direction``."""
    coeffs = np.asarray(coeffs, dtype=np.float64)
    d = np.asarray(direction, dtype=np.float64)
    d = d / np.linalg.norm(d)
    return sh_to_rgb(coeffs[None], d[None])[0]
