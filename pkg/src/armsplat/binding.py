"""Gaussians bound to mesh triangles.

Every Gaussian lives in the local frame of one triangle of one link mesh.
When the links move, each triangle yields a frame (origin, orientation, scale)
and the Gaussian's static local attributes are mapped through it to world
space. Densification and pruning never break the binding: children inherit
their parent's face and every face keeps at least one Gaussian.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, fields, replace
from typing import Mapping, Sequence

import numpy as np

from ._kernels import scatter_rows
from .geometry import SingularityError, matrix_to_quat, quat_normalize, quat_to_matrix, quat_to_matrix_backward

logger = logging.getLogger(__name__)

MIN_FACE_AREA = 1e-12
SPLIT_SCALE_DIVISOR = 1.6


class MeshError(ValueError):
    """Invalid triangle mesh."""


# -- meshes -------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class LinkMesh:
    link: str
    vertices: np.ndarray  # (V, 3) in the link frame, meters
    faces: np.ndarray  # (F, 3) vertex indices, counter-clockwise seen from outside

    def __post_init__(self):
        object.__setattr__(self, "vertices", np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3))
        object.__setattr__(self, "faces", np.asarray(self.faces, dtype=np.int64).reshape(-1, 3))

    def areas(self) -> np.ndarray:
        v = self.vertices[self.faces]
        return 0.5 * np.linalg.norm(np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]), axis=1)

    def validate(self) -> "LinkMesh":
        if len(self.faces) == 0:
            raise MeshError(f"mesh for link {self.link!r} has no faces")
        if self.faces.min() < 0 or self.faces.max() >= len(self.vertices):
            raise MeshError(f"mesh for link {self.link!r} has out-of-range face indices")
        if not np.all(np.isfinite(self.vertices)):
            raise MeshError(f"mesh for link {self.link!r} has non-finite vertices")
        bad = np.flatnonzero(self.areas() <= MIN_FACE_AREA)
        if bad.size:
            raise MeshError(f"mesh for link {self.link!r} has zero-area faces {bad[:5].tolist()}")
        # consistent winding: a directed edge may be used by at most one face
        edges = np.concatenate([self.faces[:, [0, 1]], self.faces[:, [1, 2]], self.faces[:, [2, 0]]])
        _, counts = np.unique(edges, axis=0, return_counts=True)
        if np.any(counts > 1):
            raise MeshError(f"mesh for link {self.link!r} has inconsistent winding")
        return self


def parse_obj(text: str, link: str) -> LinkMesh:
    """Read ``v`` and triangular ``f`` records of an ASCII OBJ."""
    verts: list[list[float]] = []
    faces: list[list[int]] = []
    for lineno, line in enumerate(text.splitlines(), 1):
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        if parts[0] == "v":
            if len(parts) < 4:
                raise MeshError(f"line {lineno}: vertex needs 3 coordinates")
            verts.append([float(p) for p in parts[1:4]])
        elif parts[0] == "f":
            if len(parts) != 4:
                raise MeshError(f"line {lineno}: only triangles are supported")
            idx = []
            for p in parts[1:]:
                i = int(p.split("/")[0])
                idx.append(i - 1 if i > 0 else len(verts) + i)
            faces.append(idx)
    return LinkMesh(link, np.array(verts, dtype=np.float64).reshape(-1, 3), np.array(faces, dtype=np.int64)).validate()


def format_obj(mesh: LinkMesh) -> str:
    lines = [f"# link {mesh.link}"]
    lines += [f"v {x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist()]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces.tolist()]
    return "\n".join(lines) + "\n"


class MeshBinding:
    """All link meshes stacked into one vertex/face table.

    Face ids are global indices into the stacked face table; ``face_id``
    translates them back to ``(link name, face index)``.
    """

    def __init__(self, link_names: Sequence[str], meshes: Mapping[str, LinkMesh]):
        self.link_names = tuple(name for name in link_names if name in meshes)
        verts, faces, vlink, flink, starts = [], [], [], [], []
        vbase = fbase = 0
        for li, name in enumerate(self.link_names):
            mesh = meshes[name].validate()
            verts.append(mesh.vertices)
            faces.append(mesh.faces + vbase)
            vlink.append(np.full(len(mesh.vertices), li))
            flink.append(np.full(len(mesh.faces), li))
            starts.append(fbase)
            vbase += len(mesh.vertices)
            fbase += len(mesh.faces)
        if not self.link_names:
            raise MeshError("no link has a mesh")
        self.meshes = {name: meshes[name] for name in self.link_names}
        self.vertices = np.concatenate(verts)
        self.faces = np.concatenate(faces)
        self.vertex_link = np.concatenate(vlink)
        self.face_link = np.concatenate(flink)
        self.face_start = np.array(starts + [fbase])

    @property
    def num_faces(self) -> int:
        return len(self.faces)

    def face_id(self, face: int) -> tuple[str, int]:
        li = int(self.face_link[face])
        return self.link_names[li], int(face - self.face_start[li])

    def global_face(self, link: str, index: int) -> int:
        li = self.link_names.index(link)
        if not 0 <= index < self.face_start[li + 1] - self.face_start[li]:
            raise IndexError(f"face {index} out of range for link {link!r}")
        return int(self.face_start[li] + index)

    def face_areas(self) -> np.ndarray:
        v = self.vertices[self.faces]
        return 0.5 * np.linalg.norm(np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]), axis=1)

    def pose_vertices(self, rotations: np.ndarray, translations: np.ndarray) -> np.ndarray:
        """Vertices in world space given per-link (L, 3, 3) rotations and (L, 3) translations."""
        r = rotations[self.vertex_link]
        return np.einsum("nij,nj->ni", r, self.vertices) + translations[self.vertex_link]

    def pose_vertices_backward(self, rotations: np.ndarray, grad_vertices: np.ndarray):
        """Gradients of posed vertices w.r.t. per-link rotations and translations."""
        n_links = len(self.link_names)
        outer = np.ascontiguousarray(grad_vertices[:, :, None] * self.vertices[:, None, :])
        g_rot = scatter_rows(self.vertex_link, outer, n_links).reshape(n_links, 3, 3)
        return g_rot, scatter_rows(self.vertex_link, np.ascontiguousarray(grad_vertices, np.float64), n_links)

    def triangles(self, vertices: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return vertices[self.faces[:, 0]], vertices[self.faces[:, 1]], vertices[self.faces[:, 2]]

    def scatter_triangle_grads(self, g0: np.ndarray, g1: np.ndarray, g2: np.ndarray) -> np.ndarray:
        index = np.ascontiguousarray(self.faces.T).reshape(-1)
        return scatter_rows(index, np.concatenate([g0, g1, g2]).astype(np.float64), len(self.vertices))


# -- face frames --------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FaceFrame:
    """Origin, orientation and scale of one posed triangle (arrays when batched)."""

    origin: np.ndarray
    rotation: np.ndarray
    scale: np.ndarray | float


def face_frames(v0: np.ndarray, v1: np.ndarray, v2: np.ndarray) -> FaceFrame:
    """Batched face frames for triangles ``(v0, v1, v2)`` each of shape (F, 3).

    Orientation columns are the unit base edge, the unit normal and their
    cross product; scale is the mean of base length and height.
    """
    e = v1 - v0
    f = v2 - v0
    base = np.linalg.norm(e, axis=-1)
    c = np.cross(e, f)
    area2 = np.linalg.norm(c, axis=-1)
    if np.any(area2 <= 2 * MIN_FACE_AREA):
        raise SingularityError("degenerate triangle (zero area)")
    b1 = e / base[..., None]
    n = c / area2[..., None]
    b3 = np.cross(b1, n)
    height = area2 / base
    return FaceFrame(
        origin=(v0 + v1 + v2) / 3.0,
        rotation=np.stack([b1, n, b3], axis=-1),
        scale=0.5 * (base + height),
    )


def face_frames_backward(v0, v1, v2, grad_origin, grad_rotation, grad_scale):
    """Vector-Jacobian product of :func:`face_frames` w.r.t. the three vertices."""
    e = v1 - v0
    f = v2 - v0
    base = np.linalg.norm(e, axis=-1)[..., None]
    c = np.cross(e, f)
    area2 = np.linalg.norm(c, axis=-1)[..., None]
    b1 = e / base
    n = c / area2

    g1 = grad_rotation[..., :, 0]
    gn = grad_rotation[..., :, 1]
    g3 = grad_rotation[..., :, 2]
    gb1 = g1 + np.cross(n, g3)
    gn = gn + np.cross(g3, b1)

    gk = 0.5 * np.asarray(grad_scale)[..., None]
    g_base = gk - gk * area2 / base**2
    g_area2 = gk / base

    ge = (gb1 - b1 * np.sum(b1 * gb1, axis=-1, keepdims=True)) / base + g_base * b1
    gc = (gn - n * np.sum(n * gn, axis=-1, keepdims=True)) / area2 + g_area2 * n
    ge = ge + np.cross(f, gc)
    gf = np.cross(gc, e)

    gt = grad_origin / 3.0
    return gt - ge - gf, gt + ge, gt + gf


def compute_face_frame(v0, v1, v2) -> FaceFrame:
    """Frame of a single posed triangle."""
    fr = face_frames(*(np.asarray(v, dtype=np.float64)[None] for v in (v0, v1, v2)))
    return FaceFrame(fr.origin[0], fr.rotation[0], float(fr.scale[0]))


# -- Gaussians ----------------------------------------------------------------

def sh_coefficient_count(degree: int) -> int:
    if not 0 <= degree <= 3:
        raise ValueError(f"SH degree {degree} outside 0..3")
    return (degree + 1) ** 2


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p) - np.log1p(-p)


@dataclass(eq=False)
class GaussianSet:
    """Static, learnable attributes of bound Gaussians (structure of arrays).

    ``mu`` and ``log_scale`` are in face-scale units of the parent face;
    ``quat`` is relative to the face orientation.
    """

    face: np.ndarray  # (N,) global face index
    mu: np.ndarray  # (N, 3)
    quat: np.ndarray  # (N, 4) w, x, y, z
    log_scale: np.ndarray  # (N, 3)
    opacity_logit: np.ndarray  # (N,)
    sh: np.ndarray  # (N, (d+1)^2, 3)

    def __len__(self) -> int:
        return len(self.face)

    @property
    def sh_degree(self) -> int:
        return int(round(math.sqrt(self.sh.shape[1]))) - 1

    @property
    def opacity(self) -> np.ndarray:
        return sigmoid(self.opacity_logit)

    def arrays(self) -> dict[str, np.ndarray]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def select(self, index) -> "GaussianSet":
        return GaussianSet(**{k: v[index].copy() for k, v in self.arrays().items()})

    def copy(self) -> "GaussianSet":
        return GaussianSet(**{k: v.copy() for k, v in self.arrays().items()})

    @staticmethod
    def concatenate(parts: Sequence["GaussianSet"]) -> "GaussianSet":
        names = [f.name for f in fields(GaussianSet)]
        return GaussianSet(**{n: np.concatenate([getattr(p, n) for p in parts]) for n in names})

    def validate(self, num_faces: int) -> None:
        n = len(self.face)
        for name, arr in self.arrays().items():
            if len(arr) != n:
                raise ValueError(f"attribute {name} has {len(arr)} rows, expected {n}")
            if name != "face" and not np.all(np.isfinite(arr)):
                raise ValueError(f"attribute {name} has non-finite entries")
        if n and (self.face.min() < 0 or self.face.max() >= num_faces):
            raise ValueError("face id out of range")


@dataclass(eq=False)
class WorldGaussians:
    """Gaussians in world space for one frame, ready for rasterization."""

    means: np.ndarray  # (N, 3) meters
    rotations: np.ndarray  # (N, 3, 3)
    scales: np.ndarray  # (N, 3) meters
    opacities: np.ndarray  # (N,)
    sh: np.ndarray  # (N, B, 3)

    def __len__(self) -> int:
        return len(self.means)

    @property
    def quats(self) -> np.ndarray:
        return matrix_to_quat(self.rotations)

    @classmethod
    def from_quats(cls, means, quats, scales, opacities, sh) -> "WorldGaussians":
        return cls(np.asarray(means, float), quat_to_matrix(quats), np.asarray(scales, float),
                   np.asarray(opacities, float), np.asarray(sh, float))


def local_to_world(gaussians: GaussianSet, frames: FaceFrame) -> WorldGaussians:
    """Map local attributes through their faces' frames.

    position = k R mu + T, rotation = R matrix(r), scale = k exp(s).
    """
    rot = frames.rotation[gaussians.face]
    k = np.asarray(frames.scale)[gaussians.face]
    means = k[:, None] * np.einsum("nij,nj->ni", rot, gaussians.mu) + frames.origin[gaussians.face]
    rotations = rot @ quat_to_matrix(gaussians.quat)
    scales = k[:, None] * np.exp(gaussians.log_scale)
    return WorldGaussians(means, rotations, scales, sigmoid(gaussians.opacity_logit), gaussians.sh)


@dataclass(eq=False)
class LocalGradients:
    mu: np.ndarray
    quat: np.ndarray
    log_scale: np.ndarray
    opacity_logit: np.ndarray
    sh: np.ndarray

    def as_dict(self) -> dict[str, np.ndarray]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def local_to_world_backward(gaussians: GaussianSet, frames: FaceFrame, num_faces: int,
                            g_means, g_rotations, g_scales, g_opacities, g_sh):
    """Returns (:class:`LocalGradients`, face-frame gradient :class:`FaceFrame`)."""
    face = gaussians.face
    rot = frames.rotation[face]
    k = np.asarray(frames.scale)[face]
    local_rot = quat_to_matrix(gaussians.quat)
    exp_s = np.exp(gaussians.log_scale)
    rmu = np.einsum("nij,nj->ni", rot, gaussians.mu)

    g_mu = k[:, None] * np.einsum("nji,nj->ni", rot, g_means)
    g_lrot = np.swapaxes(rot, 1, 2) @ g_rotations
    g_quat = quat_to_matrix_backward(gaussians.quat, g_lrot)
    g_log_scale = g_scales * k[:, None] * exp_s
    op = sigmoid(gaussians.opacity_logit)
    g_logit = g_opacities * op * (1.0 - op)

    g_frame_rot = (k[:, None, None] * g_means[:, :, None] * gaussians.mu[:, None, :]
                   + g_rotations @ np.swapaxes(local_rot, 1, 2))
    g_k = np.sum(g_means * rmu, axis=1) + np.sum(g_scales * exp_s, axis=1)

    fo = scatter_rows(face, np.ascontiguousarray(g_means), num_faces)
    fr = scatter_rows(face, np.ascontiguousarray(g_frame_rot), num_faces).reshape(num_faces, 3, 3)
    fk = scatter_rows(face, np.ascontiguousarray(g_k), num_faces)[:, 0]
    local = LocalGradients(g_mu, g_quat, g_log_scale, g_logit, np.array(g_sh, dtype=np.float64))
    return local, FaceFrame(fo, fr, fk)


def initialize_gaussians(binding: MeshBinding, total_count: int, seed: int, sh_degree: int = 0,
                         scale: float = 0.5) -> GaussianSet:
    """Sample Gaussians on the rest-pose mesh surface.

    Every face receives one Gaussian; the rest are distributed with
    probability proportional to face area. Each sits at a uniformly sampled
    point of its triangle, isotropic with world size ``scale`` times the face
    scale, opacity 0.1 and mid-gray color.
    """
    n_faces = binding.num_faces
    if total_count < n_faces:
        raise ValueError(f"need at least one Gaussian per face ({n_faces}), got {total_count}")
    rng = np.random.default_rng(seed)
    areas = binding.face_areas()
    extra = rng.multinomial(total_count - n_faces, areas / areas.sum())
    face = np.repeat(np.arange(n_faces), 1 + extra)

    v0, v1, v2 = binding.triangles(binding.vertices)
    frames = face_frames(v0, v1, v2)
    # uniform point in triangle via folded barycentric sampling
    u = rng.random((len(face), 2))
    flip = u.sum(axis=1) > 1.0
    u[flip] = 1.0 - u[flip]
    points = v0[face] + u[:, :1] * (v1[face] - v0[face]) + u[:, 1:] * (v2[face] - v0[face])
    k = frames.scale[face]
    mu = np.einsum("nji,nj->ni", frames.rotation[face], points - frames.origin[face]) / k[:, None]

    n = len(face)
    quat = np.zeros((n, 4))
    quat[:, 0] = 1.0
    return GaussianSet(
        face=face.astype(np.int64),
        mu=mu,
        quat=quat,
        log_scale=np.full((n, 3), math.log(scale)),
        opacity_logit=np.full(n, float(logit(0.1))),
        sh=np.zeros((n, sh_coefficient_count(sh_degree), 3)),
    )


# -- density control ----------------------------------------------------------

@dataclass(frozen=True)
class DensifyConfig:
    grad_threshold: float = 2e-4
    split_threshold: float = 0.01  # world scale, meters (1% of scene extent by default)
    split_divisor: float = SPLIT_SCALE_DIVISOR
    clone_jitter: float = 0.05  # fraction of the local scale
    max_gaussians: int | None = None


def densify(gaussians: GaussianSet, grad_stats: np.ndarray, world_scale_max: np.ndarray,
            config: DensifyConfig = DensifyConfig(), rng: np.random.Generator | None = None):
    """Clone small and split large high-gradient Gaussians.

    Returns ``(new_set, source)`` where ``source[i]`` is the old index of an
    unchanged Gaussian or -1 for a newly created one (fresh optimizer state).
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    n = len(gaussians)
    grad_stats = np.asarray(grad_stats, dtype=np.float64)
    if grad_stats.shape != (n,):
        raise ValueError("grad_stats must align with the Gaussian set")
    hot = grad_stats >= config.grad_threshold
    big = world_scale_max > config.split_threshold
    clone_idx = np.flatnonzero(hot & ~big)
    split_idx = np.flatnonzero(hot & big)
    if config.max_gaussians is not None:
        room = max(config.max_gaussians - n, 0)
        clone_idx = clone_idx[np.argsort(-grad_stats[clone_idx], kind="stable")][:room]
        clone_idx.sort()
        room -= len(clone_idx)
        split_idx = split_idx[np.argsort(-grad_stats[split_idx], kind="stable")][:room]
        split_idx.sort()
    if clone_idx.size == 0 and split_idx.size == 0:
        return gaussians, np.arange(n)

    keep = np.ones(n, dtype=bool)
    keep[split_idx] = False
    parts = [gaussians.select(keep)]

    clones = gaussians.select(clone_idx)
    if len(clones):
        local_sigma = np.exp(clones.log_scale)
        offset = np.einsum("nij,nj->ni", quat_to_matrix(clones.quat),
                           config.clone_jitter * local_sigma * rng.standard_normal((len(clones), 3)))
        clones.mu = clones.mu + offset
        parts.append(clones)

    if split_idx.size:
        parent = gaussians.select(np.repeat(split_idx, 2))
        sigma = np.exp(parent.log_scale)
        offset = np.einsum("nij,nj->ni", quat_to_matrix(parent.quat), sigma * rng.standard_normal((len(parent), 3)))
        parent.mu = parent.mu + offset
        parent.log_scale = parent.log_scale - math.log(config.split_divisor)
        parts.append(parent)

    source = np.concatenate([np.flatnonzero(keep), np.full(sum(len(p) for p in parts[1:]), -1)])
    return GaussianSet.concatenate(parts), source


def prune(gaussians: GaussianSet, opacity_threshold: float):
    """Drop transparent Gaussians but keep each face's most opaque one.

    Returns ``(new_set, kept_indices)``.
    """
    opacity = gaussians.opacity
    keep = opacity >= opacity_threshold
    covered = np.zeros(int(gaussians.face.max()) + 1 if len(gaussians) else 0, dtype=bool)
    covered[gaussians.face[keep]] = True
    orphan = ~covered[gaussians.face]
    if np.any(orphan):
        idx = np.flatnonzero(orphan)
        # highest opacity first, lowest index on ties
        order = idx[np.lexsort((idx, -opacity[idx], gaussians.face[idx]))]
        faces = gaussians.face[order]
        first = np.ones(len(order), dtype=bool)
        first[1:] = faces[1:] != faces[:-1]
        keep[order[first]] = True
    kept = np.flatnonzero(keep)
    return gaussians.select(kept), kept


def reset_opacity(gaussians: GaussianSet, ceiling: float) -> GaussianSet:
    """Cap every opacity at ``ceiling``."""
    if not 0.0 < ceiling < 1.0:
        raise ValueError("ceiling must lie in (0, 1)")
    capped = np.minimum(gaussians.opacity, ceiling)
    logits = np.where(gaussians.opacity > ceiling, logit(capped), gaussians.opacity_logit)
    return replace(gaussians, opacity_logit=logits)


def empty_faces(gaussians: GaussianSet, num_faces: int) -> np.ndarray:
    """Faces without any bound Gaussian."""
    counts = np.bincount(gaussians.face, minlength=num_faces)
    return np.flatnonzero(counts == 0)


def renormalize_quaternions(gaussians: GaussianSet) -> None:
    gaussians.quat = quat_normalize(gaussians.quat)
