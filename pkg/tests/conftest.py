import math

import numpy as np
import pytest

from armsplat.geometry import Rigid3


TWO_LINK_URDF = """<?xml version="1.0"?>
<robot name="planar">
  <link name="base"/>
  <link name="upper"><visual><geometry><mesh filename="meshes/upper.obj"/></geometry></visual></link>
  <link name="lower"/>
  <joint name="shoulder" type="revolute">
    <parent link="base"/><child link="upper"/>
    <origin xyz="0 0 0" rpy="0 0 0"/>
    <axis xyz="0 0 1"/>
    <limit lower="-3.2" upper="3.2" effort="1" velocity="1"/>
  </joint>
  <joint name="elbow" type="revolute">
    <parent link="upper"/><child link="lower"/>
    <origin xyz="1.0 0 0" rpy="0 0 0"/>
    <axis xyz="0 0 1"/>
    <limit lower="-3.2" upper="3.2" effort="1" velocity="1"/>
  </joint>
</robot>
"""


def random_rotation(rng):
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def random_rigid(rng, spread=1.0):
    return Rigid3(random_rotation(rng), rng.normal(scale=spread, size=3))


def homogeneous(rot, trans):
    m = np.eye(4)
    m[:3, :3] = rot
    m[:3, 3] = trans
    return m


def rot_about(axis, angle):
    """Rotation matrix from the quaternion of an axis-angle pair (independent of Rodrigues)."""
    axis = np.asarray(axis, float) / np.linalg.norm(axis)
    w = math.cos(angle / 2)
    x, y, z = axis * math.sin(angle / 2)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_synthetic():
    """A small synthetic scene shared by the slower tests."""
    from armsplat.synthetic import SynthSpec, generate_synthetic_scene

    return generate_synthetic_scene(SynthSpec(frames=20, width=48, height=48, gaussians=400, seed=3))
