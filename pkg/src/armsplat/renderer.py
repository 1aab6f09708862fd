"""CPU tile-based differentiable Gaussian splatting.

Pixel ``(row, col)`` has its center at image coordinates ``(x=col, y=row)``;
a camera-space point ``(X, Y, Z)`` projects to ``(fx X/Z + cx, fy Y/Z + cy)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .binding import WorldGaussians
from .geometry import Rigid3, quat_to_matrix, quat_to_matrix_backward
from .sh import sh_to_rgb, sh_to_rgb_backward

logger = logging.getLogger(__name__)

COV2D_DILATION = 0.3
DEFAULT_TILE = 16
MIN_CONDITION = 1e-12


@dataclass(frozen=True, eq=False)
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    world_to_camera: Rigid3
    near: float = 0.01
    far: float = 100.0

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not 0 < self.near < self.far:
            raise ValueError("need 0 < near < far")
        if self.width < 1 or self.height < 1:
            raise ValueError("image must be at least 1x1")

    @property
    def center(self) -> np.ndarray:
        r, t = self.world_to_camera.rotation, self.world_to_camera.translation
        return -r.T @ t

    def to_dict(self) -> dict:
        return {
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "width": self.width, "height": self.height,
            "near": self.near, "far": self.far,
            "world_to_camera": {
                "rotation": self.world_to_camera.rotation.tolist(),
                "translation": self.world_to_camera.translation.tolist(),
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Camera":
        w2c = d["world_to_camera"]
        return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                   int(d["width"]), int(d["height"]), Rigid3(w2c["rotation"], w2c["translation"]),
                   float(d.get("near", 0.01)), float(d.get("far", 100.0)))

    @classmethod
    def look_at(cls, eye, target, up, fx, fy, width, height, cx=None, cy=None, **kw) -> "Camera":
        """Camera at ``eye`` looking at ``target`` (+z forward, +y down in the image)."""
        eye, target, up = (np.asarray(v, dtype=np.float64) for v in (eye, target, up))
        fwd = target - eye
        fwd /= np.linalg.norm(fwd)
        right = np.cross(fwd, up)
        right /= np.linalg.norm(right)
        down = np.cross(fwd, right)
        rot = np.stack([right, down, fwd])  # rows: camera axes in world coordinates
        return cls(fx, fy, width / 2.0 if cx is None else cx, height / 2.0 if cy is None else cy,
                   width, height, Rigid3(rot, -rot @ eye), **kw)


@dataclass(eq=False)
class SplatImage:
    pixels: np.ndarray  # (H, W, 3)
    alpha: np.ndarray | None = None  # (H, W) accumulated opacity

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


def build_covariance(scale, rotation) -> np.ndarray:
    """``R diag(scale^2) R^T`` for a quaternion ``rotation`` (or a rotation matrix)."""
    rotation = np.asarray(rotation, dtype=np.float64)
    r = quat_to_matrix(rotation) if rotation.shape[-1] == 4 else rotation
    s2 = np.asarray(scale, dtype=np.float64) ** 2
    return (r * s2[..., None, :]) @ np.swapaxes(r, -1, -2)


@dataclass(eq=False)
class Projection:
    cam_means: np.ndarray  # (N, 3)
    depth: np.ndarray  # (N,)
    mean2d: np.ndarray  # (N, 2)
    cov2d: np.ndarray  # (N, 2, 2), dilated
    jac: np.ndarray  # (N, 2, 3) perspective Jacobian at the mean
    cov3d: np.ndarray  # (N, 3, 3)
    visible: np.ndarray  # (N,) bool, not culled


def project(means, rotations, scales, cam: Camera) -> Projection:
    """Project Gaussians given rotation matrices; culled ones (outside [near, far]) are flagged invisible."""
    w = cam.world_to_camera
    f64 = np.float64
    cam_means, mean2d, cov2d, jac, cov3d, visible = _kernels.project_forward(
        np.ascontiguousarray(means, f64), np.ascontiguousarray(rotations, f64), np.ascontiguousarray(scales, f64),
        np.ascontiguousarray(w.rotation, f64), np.ascontiguousarray(w.translation, f64),
        float(cam.fx), float(cam.fy), float(cam.cx), float(cam.cy), float(cam.near), float(cam.far),
        COV2D_DILATION)
    return Projection(cam_means, cam_means[:, 2], mean2d, cov2d, jac, cov3d, visible)


def project_gaussian(g: WorldGaussians, index: int, cam: Camera):
    """``(mean2d, cov2d, depth)`` of one Gaussian, or ``None`` when culled."""
    p = project(g.means[index:index + 1], g.rotations[index:index + 1], g.scales[index:index + 1], cam)
    if not p.visible[0]:
        return None
    return p.mean2d[0], p.cov2d[0], float(p.depth[0])


@dataclass(eq=False)
class RenderState:
    """Everything the backward pass needs from a forward pass."""

    gaussians: WorldGaussians
    cam: Camera
    background: np.ndarray
    tile: int
    proj: Projection
    active: np.ndarray  # (M,) Gaussian indices in depth order
    conic: np.ndarray  # (M, 3)
    colors: np.ndarray  # (N, 3)
    view_dirs: np.ndarray  # (N, 3)
    view_dist: np.ndarray  # (N,)
    counts: np.ndarray
    pairs: np.ndarray
    bbox: np.ndarray  # (M, 4) inclusive pixel support x0, y0, x1, y1
    raw: np.ndarray  # (H, W, 3) before clamping
    final_t: np.ndarray
    n_contrib: np.ndarray
    clamp: bool


def _view_dirs(means, cam: Camera):
    d = means - cam.center
    dist = np.linalg.norm(d, axis=1)
    return d / np.maximum(dist, 1e-12)[:, None], dist


def rasterize(gaussians: WorldGaussians, cam: Camera, background=(0.0, 0.0, 0.0), tile: int = DEFAULT_TILE,
              clamp: bool = True, return_state: bool = False):
    """Render ``gaussians``; returns a :class:`SplatImage` (and the state if asked)."""
    bg = np.asarray(background, dtype=np.float64).reshape(3)
    n = len(gaussians)
    if n:
        proj = project(gaussians.means, gaussians.rotations, gaussians.scales, cam)
        dirs, dist = _view_dirs(gaussians.means, cam)
        colors = sh_to_rgb(gaussians.sh, dirs)
    else:
        proj = project(np.zeros((0, 3)), np.zeros((0, 3, 3)), np.zeros((0, 3)), cam)
        dirs, dist, colors = np.zeros((0, 3)), np.zeros(0), np.zeros((0, 3))

    opac = gaussians.opacities
    a, b, c = proj.cov2d[:, 0, 0], proj.cov2d[:, 0, 1], proj.cov2d[:, 1, 1]
    det = a * c - b * b
    mid = 0.5 * (a + c)
    lam_max = mid + np.sqrt(np.maximum(mid * mid - det, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        lam_min = det / lam_max
        well_conditioned = np.isfinite(lam_min) & (lam_min > MIN_CONDITION * lam_max)
    bad = proj.visible & ~well_conditioned
    if np.any(bad):
        logger.warning("skipping %d Gaussians with singular projected covariance", int(bad.sum()))
    keep = proj.visible & well_conditioned & (opac * 255.0 > 1.0)

    idx = np.flatnonzero(keep)
    idx = idx[np.argsort(proj.depth[idx], kind="stable")]
    conic = np.stack([c[idx] / det[idx], -b[idx] / det[idx], a[idx] / det[idx]], axis=1)
    # exact support of alpha >= 1/255, padded against rounding
    radius = np.sqrt(2.0 * np.log(255.0 * opac[idx]) * lam_max[idx]) * (1.0 + 1e-9) + 1e-9
    mx, my = proj.mean2d[idx, 0], proj.mean2d[idx, 1]
    x0 = np.clip(np.ceil(mx - radius), 0, cam.width)
    x1 = np.clip(np.floor(mx + radius), -1, cam.width - 1)
    y0 = np.clip(np.ceil(my - radius), 0, cam.height)
    y1 = np.clip(np.floor(my + radius), -1, cam.height - 1)
    on_screen = (x0 <= x1) & (y0 <= y1)
    idx, conic = idx[on_screen], conic[on_screen]
    ncols = (cam.width + tile - 1) // tile
    nrows = (cam.height + tile - 1) // tile
    rect = np.stack([x0[on_screen] // tile, y0[on_screen] // tile, x1[on_screen] // tile,
                     y1[on_screen] // tile, np.full(len(idx), ncols)], axis=1).astype(np.int64)
    counts, pairs = _kernels.bin_tiles(rect.reshape(-1, 5), ncols * nrows)
    bbox = np.stack([x0[on_screen], y0[on_screen], x1[on_screen], y1[on_screen]], axis=1).astype(np.int64)
    bbox = bbox.reshape(-1, 4)

    mean2d = np.ascontiguousarray(proj.mean2d[idx])
    raw, final_t, n_contrib = _kernels.composite_forward(
        counts, pairs, bbox, mean2d, conic, np.ascontiguousarray(opac[idx]),
        np.ascontiguousarray(colors[idx]), bg, cam.width, cam.height, tile)
    pixels = np.clip(raw, 0.0, 1.0) if clamp else raw.copy()
    image = SplatImage(pixels, 1.0 - final_t)
    if not return_state:
        return image
    state = RenderState(gaussians, cam, bg, tile, proj, idx, conic, colors, dirs, dist,
                        counts, pairs, bbox, raw, final_t, n_contrib, clamp)
    return image, state


@dataclass(eq=False)
class RenderGradients:
    means: np.ndarray  # (N, 3)
    rotations: np.ndarray  # (N, 3, 3) w.r.t. the rotation matrix
    scales: np.ndarray  # (N, 3)
    opacities: np.ndarray  # (N,)
    sh: np.ndarray  # (N, B, 3)
    mean2d: np.ndarray  # (N, 2) pixel-space
    viewspace_norm: np.ndarray  # (N,) |dL/d mean2d| in normalized device units

    def quats(self, quats: np.ndarray) -> np.ndarray:
        """Gradient w.r.t. (raw) quaternions that produced the rotations."""
        return quat_to_matrix_backward(quats, self.rotations)


def rasterize_backward(gaussians: WorldGaussians, cam: Camera, background, grad_pixels,
                       state: RenderState | None = None, tile: int = DEFAULT_TILE) -> RenderGradients:
    """Exact gradients of the rendered image w.r.t. every Gaussian attribute."""
    if state is None:
        _, state = rasterize(gaussians, cam, background, tile=tile, return_state=True)
    g = state.gaussians
    n = len(g)
    grad_pixels = np.asarray(grad_pixels, dtype=np.float64)
    if grad_pixels.shape != state.raw.shape:
        raise ValueError("upstream gradient shape does not match the image")
    if state.clamp:
        grad_pixels = np.where((state.raw >= 0.0) & (state.raw <= 1.0), grad_pixels, 0.0)

    idx = state.active
    proj = state.proj
    opac = g.opacities
    buf = _kernels.composite_backward(
        state.counts, state.pairs, state.bbox, np.ascontiguousarray(proj.mean2d[idx]), state.conic,
        np.ascontiguousarray(opac[idx]), np.ascontiguousarray(state.colors[idx]), state.background,
        cam.width, cam.height, state.tile, state.final_t, state.n_contrib, np.ascontiguousarray(grad_pixels))
    per = _kernels.reduce_pairs(state.pairs, buf, len(idx))

    g_opac = np.zeros(n)
    g_opac[idx] = per[:, 5]
    g_color = np.zeros((n, 3))
    g_color[idx] = per[:, 6:9]
    g_mean2d, g_means, g_rot, g_scales = _kernels.project_backward(
        idx, per, state.conic, proj.cam_means, proj.jac, proj.cov3d, np.ascontiguousarray(g.rotations),
        np.ascontiguousarray(g.scales), np.ascontiguousarray(cam.world_to_camera.rotation), float(cam.fx),
        float(cam.fy), n)

    g_sh, g_dirs = sh_to_rgb_backward(g.sh, state.view_dirs, g_color)
    if np.any(g_dirs):
        u = state.view_dirs
        g_means += (g_dirs - u * np.sum(u * g_dirs, axis=1, keepdims=True)) / np.maximum(state.view_dist, 1e-12)[:, None]

    ndc = g_mean2d * np.array([0.5 * cam.width, 0.5 * cam.height])
    return RenderGradients(g_means, g_rot, g_scales, g_opac, g_sh, g_mean2d, np.linalg.norm(ndc, axis=1))

