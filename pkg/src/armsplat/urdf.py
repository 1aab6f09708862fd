"""URDF subset parser and forward kinematics.

Only ``robot``, ``link`` (with ``visual/geometry/mesh@filename``) and ``joint``
(``origin``, ``axis``, ``limit``, ``parent``, ``child``) are read; everything
else is skipped with a warning.
"""

from __future__ import annotations

import heapq
import logging
import math
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .geometry import Rigid3, axis_angle_matrix, rpy_matrix

logger = logging.getLogger(__name__)

JOINT_TYPES = ("revolute", "continuous", "prismatic", "fixed")
_SKIPPED_ELEMENTS = {"collision", "inertial", "material", "transmission", "gazebo"}


class URDFError(ValueError):
    """Malformed or structurally invalid robot description."""


@dataclass(frozen=True)
class Link:
    name: str
    mesh: str | None = None


@dataclass(frozen=True, eq=False)
class Joint:
    name: str
    type: str
    parent: str
    child: str
    origin: Rigid3 = field(default_factory=Rigid3.identity)
    axis: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0]))
    limits: tuple[float, float] | None = None

    @property
    def moving(self) -> bool:
        return self.type != "fixed"

    def motion(self, value: float) -> Rigid3:
        """Transform contributed by the joint variable (applied after ``origin``)."""
        if self.type in ("revolute", "continuous"):
            return Rigid3(axis_angle_matrix(self.axis, value), np.zeros(3))
        if self.type == "prismatic":
            return Rigid3(np.eye(3), self.axis * value)
        return Rigid3.identity()


@dataclass(frozen=True, eq=False)
class KinematicModel:
    """Validated kinematic tree. Joints are stored in topological order."""

    name: str
    links: tuple[Link, ...]
    joints: tuple[Joint, ...]
    root: str

    def link(self, name: str) -> Link:
        for link in self.links:
            if link.name == name:
                return link
        raise KeyError(name)

    def joint(self, name: str) -> Joint:
        for joint in self.joints:
            if joint.name == name:
                return joint
        raise KeyError(name)

    @property
    def link_names(self) -> list[str]:
        return [link.name for link in self.links]

    def parent_joint(self, link_name: str) -> Joint | None:
        for joint in self.joints:
            if joint.child == link_name:
                return joint
        return None

    def actuating_joint(self, link_name: str) -> str | None:
        """Nearest moving joint on the path from ``link_name`` to the root."""
        joint = self.parent_joint(link_name)
        while joint is not None:
            if joint.moving:
                return joint.name
            joint = self.parent_joint(joint.parent)
        return None


def _floats(text: str | None, n: int, default: tuple[float, ...]) -> np.ndarray:
    if text is None:
        return np.array(default, dtype=np.float64)
    parts = text.split()
    if len(parts) != n:
        raise URDFError(f"expected {n} numbers, got {text!r}")
    try:
        return np.array([float(p) for p in parts])
    except ValueError as exc:
        raise URDFError(f"non-numeric value in {text!r}") from exc


def _parse_origin(elem: ET.Element | None) -> Rigid3:
    if elem is None:
        return Rigid3.identity()
    xyz = _floats(elem.get("xyz"), 3, (0.0, 0.0, 0.0))
    rpy = _floats(elem.get("rpy"), 3, (0.0, 0.0, 0.0))
    return Rigid3(rpy_matrix(*rpy), xyz)


def parse_urdf(text: str) -> KinematicModel:
    """Parse URDF XML text into a validated :class:`KinematicModel`."""
    try:
        root = ET.fromstring(text)
    except ET.ParseError as exc:
        raise URDFError(f"malformed XML: {exc}") from exc
    if root.tag != "robot":
        raise URDFError(f"root element is <{root.tag}>, expected <robot>")

    links: list[Link] = []
    raw_joints: list[Joint] = []
    for elem in root:
        if elem.tag == "link":
            links.append(_parse_link(elem))
        elif elem.tag == "joint":
            raw_joints.append(_parse_joint(elem))
        else:
            logger.warning("ignoring unsupported URDF element <%s>", elem.tag)

    if not links:
        raise URDFError("robot declares no links")
    names = [link.name for link in links]
    if len(set(names)) != len(names):
        raise URDFError("duplicate link names")
    if len({j.name for j in raw_joints}) != len(raw_joints):
        raise URDFError("duplicate joint names")

    declared = set(names)
    parent_of: dict[str, Joint] = {}
    for joint in raw_joints:
        for end in (joint.parent, joint.child):
            if end not in declared:
                raise URDFError(f"joint {joint.name!r} references undeclared link {end!r}")
        if joint.child in parent_of:
            raise URDFError(f"link {joint.child!r} has more than one parent joint")
        parent_of[joint.child] = joint

    roots = [n for n in names if n not in parent_of]
    if not roots:
        raise URDFError("kinematic graph has a cycle (no root link)")
    if len(roots) > 1:
        raise URDFError(f"multiple root links: {roots}")

    ordered = _topological(roots[0], names, raw_joints)
    if len(ordered) != len(raw_joints):
        raise URDFError("kinematic graph has a cycle")
    return KinematicModel(root.get("name", "robot"), tuple(links), tuple(ordered), roots[0])


def _parse_link(elem: ET.Element) -> Link:
    name = elem.get("name")
    if not name:
        raise URDFError("<link> without a name")
    mesh = None
    for child in elem:
        if child.tag == "visual":
            node = child.find("geometry/mesh")
            if node is not None and mesh is None:
                mesh = node.get("filename")
            if child.find("material") is not None:
                logger.warning("ignoring visual material on link %r", name)
        elif child.tag in _SKIPPED_ELEMENTS:
            logger.warning("ignoring <%s> on link %r", child.tag, name)
    return Link(name, mesh)


def _parse_joint(elem: ET.Element) -> Joint:
    name = elem.get("name")
    jtype = elem.get("type")
    if not name:
        raise URDFError("<joint> without a name")
    if jtype not in JOINT_TYPES:
        raise URDFError(f"joint {name!r} has unsupported type {jtype!r}")
    parent = elem.find("parent")
    child = elem.find("child")
    if parent is None or child is None or not parent.get("link") or not child.get("link"):
        raise URDFError(f"joint {name!r} lacks parent/child links")

    axis_elem = elem.find("axis")
    axis = _floats(axis_elem.get("xyz") if axis_elem is not None else None, 3, (1.0, 0.0, 0.0))
    norm = np.linalg.norm(axis)
    if jtype != "fixed":
        if norm < 1e-12:
            raise URDFError(f"joint {name!r} has a zero axis")
        axis = axis / norm

    limits = None
    limit_elem = elem.find("limit")
    if limit_elem is not None and jtype in ("revolute", "prismatic"):
        if limit_elem.get("lower") is not None or limit_elem.get("upper") is not None:
            lower = float(limit_elem.get("lower", "0"))
            upper = float(limit_elem.get("upper", "0"))
            if lower > upper:
                raise URDFError(f"joint {name!r} has lower limit above upper limit")
            limits = (lower, upper)
    return Joint(name, jtype, parent.get("link"), child.get("link"), _parse_origin(elem.find("origin")), axis, limits)


def _topological(root: str, link_order: list[str], joints: list[Joint]) -> list[Joint]:
    """Kahn's algorithm; among ready joints the earliest declared goes first."""
    children: dict[str, list[int]] = {n: [] for n in link_order}
    for idx, joint in enumerate(joints):
        children[joint.parent].append(idx)
    ordered: list[Joint] = []
    ready = list(children[root])
    heapq.heapify(ready)
    while ready:
        idx = heapq.heappop(ready)
        ordered.append(joints[idx])
        for nxt in children[joints[idx].child]:
            heapq.heappush(ready, nxt)
    return ordered


def moving_joints(model: KinematicModel) -> list[str]:
    """Non-fixed joint names, parents before children, ties by declaration order."""
    return [j.name for j in model.joints if j.moving]


def clamp_configuration(model: KinematicModel, config: Mapping[str, float]) -> dict[str, float]:
    """Validate joint names and clamp values into their limits (with a warning)."""
    out: dict[str, float] = {}
    for name, value in config.items():
        try:
            joint = model.joint(name)
        except KeyError:
            raise URDFError(f"configuration names unknown joint {name!r}") from None
        if not joint.moving:
            raise URDFError(f"joint {name!r} is fixed and takes no value")
        value = float(value)
        if not math.isfinite(value):
            raise URDFError(f"non-finite value for joint {name!r}")
        if joint.limits is not None:
            lo, hi = joint.limits
            if value < lo or value > hi:
                logger.warning("joint %r value %.6g outside [%.6g, %.6g]; clamping", name, value, lo, hi)
                value = min(max(value, lo), hi)
        out[name] = value
    return out


def forward_kinematics(
    model: KinematicModel,
    config: Mapping[str, float],
    base: Rigid3 | None = None,
) -> dict[str, Rigid3]:
    """World pose of every link; the root sits at ``base`` (identity by default)."""
    values = clamp_configuration(model, config)
    poses = {model.root: base if base is not None else Rigid3.identity()}
    for joint in model.joints:
        if joint.moving:
            if joint.name not in values:
                raise URDFError(f"configuration lacks a value for joint {joint.name!r}")
            local = joint.origin @ joint.motion(values[joint.name])
        else:
            local = joint.origin
        poses[joint.child] = poses[joint.parent] @ local
    return poses
