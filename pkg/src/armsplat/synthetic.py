"""Synthetic arm scenes with a known kinematic residual.

Frames are rendered with a ground-truth Gaussian set and a ground-truth
motion residual, while the package ships the clean URDF and joint log. A
fitter therefore has to learn the residual to reproduce the images.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .binding import GaussianSet, LinkMesh, face_frames, logit, sh_coefficient_count
from .checkpoint import Checkpoint
from .dataset import JointTrajectory, ScenePackage, split_dataset, synchronize_joints
from .geometry import IDENTITY_6D, axis_angle_matrix, bernstein_matrix, rotation_to_6d
from .pipeline import ArmParams, ArmRig, render_frame
from .refiner import BezierResidual, JointEmbeddings
from .renderer import Camera
from .sh import C0
from .urdf import parse_urdf

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SynthSpec:
    """Knobs of a generated scene. Lengths are meters, angles radians."""

    joints: int = 3
    frames: int = 100
    width: int = 96
    height: int = 96
    gaussians: int = 1500
    seed: int = 0
    fps: float = 10.0
    joint_rate: float = 3.0  # joint records per frame
    amplitude: float = 0.6
    offset_joint: int = 2  # 1-based joint index carrying the static offset
    offset_deg: float = 2.0
    wobble: float = 0.005
    wobble_cycles: float = 2.0
    omega: float = 0.1
    degree: int = 19
    background: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.joints not in (2, 3):
            raise ValueError("the generator builds 2- or 3-joint arms")
        if not 1 <= self.offset_joint <= self.joints:
            raise ValueError("offset_joint must name one of the arm's joints")
        if self.frames < 20:
            raise ValueError("need at least 20 frames")


_LINKS = [
    # name, box half sizes (x, y), height, joint axis, joint origin height in parent, color
    ("base_link", (0.02, 0.02), 0.02, None, None, (0.55, 0.55, 0.6)),
    ("link1", (0.0125, 0.0125), 0.06, (0, 0, 1), 0.02, (0.85, 0.35, 0.2)),
    ("link2", (0.011, 0.011), 0.07, (0, 1, 0), 0.06, (0.25, 0.65, 0.3)),
    ("link3", (0.009, 0.009), 0.06, (0, 1, 0), 0.07, (0.2, 0.4, 0.9)),
]


def box_mesh(link: str, half_x: float, half_y: float, height: float, divisions: int = 2) -> LinkMesh:
    """Closed box on ``z in [0, height]`` with every side cut into ``divisions^2`` quads."""
    lo = np.array([-half_x, -half_y, 0.0])
    hi = np.array([half_x, half_y, height])
    verts: list[np.ndarray] = []
    faces: list[tuple[int, int, int]] = []
    for axis in range(3):
        u_ax, v_ax = (axis + 1) % 3, (axis + 2) % 3
        for side, sign in ((hi, 1.0), (lo, -1.0)):
            base = len(verts)
            for i in range(divisions + 1):
                for j in range(divisions + 1):
                    p = np.empty(3)
                    p[axis] = side[axis]
                    p[u_ax] = lo[u_ax] + (hi[u_ax] - lo[u_ax]) * i / divisions
                    p[v_ax] = lo[v_ax] + (hi[v_ax] - lo[v_ax]) * j / divisions
                    verts.append(p)
            for i in range(divisions):
                for j in range(divisions):
                    a = base + i * (divisions + 1) + j
                    b, c, d = a + divisions + 1, a + divisions + 2, a + 1
                    # (u, v, axis) is right-handed, so (a, b, c) winds outward on the + side
                    tris = [(a, b, c), (a, c, d)] if sign > 0 else [(a, c, b), (a, d, c)]
                    faces.extend(tris)
    return LinkMesh(link, np.array(verts), np.array(faces, dtype=np.int64)).validate()


def arm_urdf(joints: int = 3) -> str:
    lines = ['<?xml version="1.0"?>', '<robot name="synthetic_arm">']
    links = _LINKS[: joints + 1]
    for name, *_ in links:
        lines.append(f'  <link name="{name}"><visual><geometry><mesh filename="meshes/{name}.obj"/>'
                     f"</geometry></visual></link>")
    for i in range(1, len(links)):
        name, _, _, axis, z, _ = links[i]
        lines += [
            f'  <joint name="joint{i}" type="revolute">',
            f'    <parent link="{links[i - 1][0]}"/>',
            f'    <child link="{name}"/>',
            f'    <origin xyz="0 0 {z!r}" rpy="0 0 0"/>',
            f'    <axis xyz="{axis[0]} {axis[1]} {axis[2]}"/>',
            '    <limit lower="-3.14159" upper="3.14159" effort="1" velocity="1"/>',
            "  </joint>",
        ]
    lines.append("</robot>")
    return "\n".join(lines) + "\n"


def arm_meshes(joints: int = 3) -> dict[str, LinkMesh]:
    return {name: box_mesh(name, hx, hy, h) for name, (hx, hy), h, *_ in _LINKS[: joints + 1]}


def arm_camera(width: int = 96, height: int = 96) -> Camera:
    f = 230.0 * width / 96.0
    return Camera.look_at(eye=(0.32, -0.44, 0.26), target=(0.0, 0.0, 0.11), up=(0, 0, 1),
                          fx=f, fy=f, width=width, height=height)


def ground_truth_gaussians(rig: ArmRig, count: int, rng: np.random.Generator) -> GaussianSet:
    """Flat, nearly opaque textured Gaussians spread over the rest-pose surface."""
    b = rig.binding
    n_faces = b.num_faces
    areas = b.face_areas()
    face = np.repeat(np.arange(n_faces), 1 + rng.multinomial(count - n_faces, areas / areas.sum()))
    v0, v1, v2 = b.triangles(b.vertices)
    frames = face_frames(v0, v1, v2)
    u = rng.random((len(face), 2))
    flip = u.sum(axis=1) > 1.0
    u[flip] = 1.0 - u[flip]
    points = v0[face] + u[:, :1] * (v1[face] - v0[face]) + u[:, 1:] * (v2[face] - v0[face])
    k = frames.scale[face]
    mu = np.einsum("nji,nj->ni", frames.rotation[face], points - frames.origin[face]) / k[:, None]

    # in-plane rotation about the face normal (local y axis)
    angle = rng.uniform(0, math.pi, len(face))
    quat = np.stack([np.cos(angle / 2), np.zeros_like(angle), np.sin(angle / 2), np.zeros_like(angle)], axis=1)

    colors = {name: np.array(c) for name, _, _, _, _, c in _LINKS}
    link_of_face = np.array([b.link_names[i] for i in b.face_link[face]])
    base = np.stack([colors[name] for name in link_of_face])
    # stripes along the link's height make motion visible
    stripe = np.sin(2 * math.pi * points[:, 2] / 0.02) > 0
    rgb = np.clip(base * np.where(stripe, 1.0, 0.3)[:, None] + rng.normal(0, 0.03, (len(face), 3)), 0.02, 0.98)
    sh = np.zeros((len(face), sh_coefficient_count(0), 3))
    sh[:, 0, :] = (rgb - 0.5) / C0
    n = len(face)
    return GaussianSet(
        face=face.astype(np.int64),
        mu=mu,
        quat=quat,
        log_scale=np.tile(np.log([0.25, 0.05, 0.25]), (n, 1)),
        opacity_logit=np.full(n, float(logit(0.95))),
        sh=sh,
    )


def joint_trajectory(spec: SynthSpec, names, rng: np.random.Generator) -> JointTrajectory:
    duration = (spec.frames - 1) / spec.fps
    count = int(round((spec.frames - 1) * spec.joint_rate)) + 1
    ts = np.linspace(0.0, duration, count)
    freq = rng.uniform(0.6, 1.2, len(names)) / duration
    phase = rng.uniform(0, 2 * math.pi, len(names))
    amp = spec.amplitude * rng.uniform(0.6, 1.0, len(names))
    values = amp * np.sin(2 * math.pi * freq * ts[:, None] + phase)
    return JointTrajectory(ts, tuple(names), values)


def residual_embedding(axis, angle: float) -> np.ndarray:
    """Embedding vector for a constant rotation by ``angle`` about ``axis``."""
    vec = np.zeros(9)
    vec[3:] = rotation_to_6d(axis_angle_matrix(np.asarray(axis, float), angle)) - IDENTITY_6D
    return vec


def wobble_curve(amplitude: float, cycles: float, omega: float, degree: int, samples: int = 400) -> BezierResidual:
    """Least-squares Bézier fit of a sinusoidal translation along local x."""
    t = np.linspace(0.0, 1.0, samples)
    target = np.zeros((samples, 9))
    target[:, 0] = amplitude * np.sin(2 * math.pi * cycles * t)
    basis = bernstein_matrix(degree, t)
    if omega == 0:
        return BezierResidual(np.zeros((degree + 1, 9)), omega)
    cp, *_ = np.linalg.lstsq(omega * basis, target, rcond=None)
    return BezierResidual(cp, omega)


@dataclass(eq=False)
class SyntheticScene:
    scene: ScenePackage
    truth: Checkpoint  # ground-truth Gaussians and residual


def generate_synthetic_scene(spec: SynthSpec = SynthSpec()) -> SyntheticScene:
    rng = np.random.default_rng(spec.seed)
    urdf = arm_urdf(spec.joints)
    meshes = arm_meshes(spec.joints)
    model = parse_urdf(urdf)
    rig = ArmRig.from_meshes(model, meshes)
    cam = arm_camera(spec.width, spec.height)

    gaussians = ground_truth_gaussians(rig, spec.gaussians, rng)
    traj = joint_trajectory(spec, rig.joint_names, rng)
    frame_times = np.arange(spec.frames) / spec.fps

    embeddings = JointEmbeddings.zeros(model)
    if spec.offset_deg:
        jname = f"joint{spec.offset_joint}"
        embeddings.values[embeddings.names.index(jname)] = residual_embedding(
            model.joint(jname).axis, math.radians(spec.offset_deg))
    curve = wobble_curve(spec.wobble, spec.wobble_cycles, spec.omega, spec.degree)
    truth = ArmParams(gaussians, curve, embeddings)

    configs = synchronize_joints(traj, frame_times)
    span = frame_times[-1] - frame_times[0]
    bg = np.asarray(spec.background, dtype=np.float64)
    frames, masks = [], []
    for i, cfg in enumerate(configs):
        img = render_frame(rig, truth, cfg, float((frame_times[i] - frame_times[0]) / span), cam, bg)
        # the stored frame is what the float dump holds, so reloads are exact
        frames.append(img.pixels.astype(np.float32).astype(np.float64))
        masks.append(img.alpha > 0.5)
    train, val, test = split_dataset(spec.frames)
    scene = ScenePackage(
        name=f"synthetic_arm_seed{spec.seed}",
        camera=cam,
        frame_times=frame_times,
        frames=frames,
        trajectory=traj,
        urdf=urdf,
        meshes=meshes,
        split={"train": train, "val": val, "test": test},
        background=bg,
        masks=masks,
    )
    config = {"kind": "ground_truth", "synth": {k: (list(v) if isinstance(v, tuple) else v)
                                                 for k, v in spec.__dict__.items()}}
    return SyntheticScene(scene, Checkpoint(truth, 0, config))
