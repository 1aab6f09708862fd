"""Joint angles to image, and image gradients back to every learnable parameter."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .binding import (FaceFrame, GaussianSet, LinkMesh, LocalGradients, MeshBinding, face_frames,
                      face_frames_backward, local_to_world, local_to_world_backward)
from .refiner import (BezierResidual, JointEmbeddings, RefinedPoses, actuating_indices, refine_link_arrays,
                      refine_link_arrays_backward)
from .renderer import Camera, RenderGradients, RenderState, SplatImage, rasterize, rasterize_backward
from .urdf import KinematicModel, forward_kinematics, moving_joints


@dataclass
class ArmRig:
    """Static description of an arm: kinematics plus the stacked link meshes."""

    model: KinematicModel
    binding: MeshBinding
    joint_names: list[str] = field(init=False)
    actuator: np.ndarray = field(init=False)

    def __post_init__(self):
        self.joint_names = moving_joints(self.model)
        self.actuator = actuating_indices(self.model, self.binding.link_names, self.joint_names)

    @classmethod
    def from_meshes(cls, model: KinematicModel, meshes: Mapping[str, LinkMesh]) -> "ArmRig":
        return cls(model, MeshBinding(model.link_names, meshes))

    def fk_arrays(self, config: Mapping[str, float]) -> tuple[np.ndarray, np.ndarray]:
        poses = forward_kinematics(self.model, config)
        names = self.binding.link_names
        return (np.stack([poses[n].rotation for n in names]),
                np.stack([poses[n].translation for n in names]))

    def rest_vertices(self) -> np.ndarray:
        rot, trans = self.fk_arrays({j: 0.0 for j in self.joint_names})
        return self.binding.pose_vertices(rot, trans)

    def scene_extent(self) -> float:
        """1.1 times the largest distance of a rest-pose vertex from the vertex centroid."""
        v = self.rest_vertices()
        return 1.1 * float(np.max(np.linalg.norm(v - v.mean(axis=0), axis=1)))


@dataclass
class ArmParams:
    """Everything a fit learns."""

    gaussians: GaussianSet
    curve: BezierResidual
    embeddings: JointEmbeddings

    def copy(self) -> "ArmParams":
        return ArmParams(self.gaussians.copy(),
                         BezierResidual(self.curve.control_points.copy(), self.curve.omega),
                         JointEmbeddings(tuple(self.embeddings.names), self.embeddings.values.copy()))


@dataclass(eq=False)
class ForwardCache:
    poses: RefinedPoses
    vertices: np.ndarray
    triangles: tuple[np.ndarray, np.ndarray, np.ndarray]
    frames: FaceFrame
    render: RenderState


@dataclass(eq=False)
class ParamGradients:
    local: LocalGradients
    control_points: np.ndarray
    embeddings: np.ndarray
    render: RenderGradients


def render_frame(rig: ArmRig, params: ArmParams, config: Mapping[str, float], t: float, cam: Camera,
                 background, return_cache: bool = False):
    """Render the arm at joint configuration ``config`` and normalized time ``t``."""
    fk_rot, fk_trans = rig.fk_arrays(config)
    poses = refine_link_arrays(fk_rot, fk_trans, rig.actuator, t, params.curve, params.embeddings.values)
    verts = rig.binding.pose_vertices(poses.rotations, poses.translations)
    tri = rig.binding.triangles(verts)
    frames = face_frames(*tri)
    world = local_to_world(params.gaussians, frames)
    image, state = rasterize(world, cam, background, return_state=True)
    if not return_cache:
        return image
    return image, ForwardCache(poses, verts, tri, frames, state)


def backward_frame(rig: ArmRig, params: ArmParams, cache: ForwardCache, grad_pixels: np.ndarray,
                   need_motion: bool = True) -> ParamGradients:
    """Backpropagate an image gradient through rasterization, binding and refinement."""
    state = cache.render
    rg = rasterize_backward(state.gaussians, state.cam, state.background, grad_pixels, state=state)
    local, g_frames = local_to_world_backward(params.gaussians, cache.frames, rig.binding.num_faces,
                                              rg.means, rg.rotations, rg.scales, rg.opacities, rg.sh)
    g_cp = np.zeros_like(params.curve.control_points)
    g_emb = np.zeros_like(params.embeddings.values)
    if need_motion:
        g0, g1, g2 = face_frames_backward(*cache.triangles, g_frames.origin, g_frames.rotation, g_frames.scale)
        g_verts = rig.binding.scatter_triangle_grads(g0, g1, g2)
        g_rot, g_trans = rig.binding.pose_vertices_backward(cache.poses.rotations, g_verts)
        g_cp, g_emb = refine_link_arrays_backward(cache.poses, params.curve, params.embeddings.values,
                                                  g_rot, g_trans)
    return ParamGradients(local, g_cp, g_emb, rg)

