import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from armsplat.geometry import Rigid3
from armsplat.urdf import URDFError, clamp_configuration, forward_kinematics, moving_joints, parse_urdf

from conftest import TWO_LINK_URDF, homogeneous, random_rigid, rot_about


def chain_urdf(joints):
    """Serial chain; ``joints`` is a list of (type, xyz, rpy, axis)."""
    lines = ['<robot name="chain">'] + [f'<link name="l{i}"/>' for i in range(len(joints) + 1)]
    for i, (jtype, xyz, rpy, axis) in enumerate(joints):
        lines.append(
            f'<joint name="j{i + 1}" type="{jtype}"><parent link="l{i}"/><child link="l{i + 1}"/>'
            f'<origin xyz="{" ".join(repr(float(v)) for v in xyz)}" rpy="{" ".join(repr(float(v)) for v in rpy)}"/>'
            f'<axis xyz="{" ".join(repr(float(v)) for v in axis)}"/></joint>')
    lines.append("</robot>")
    return "\n".join(lines)


def chain_oracle(joints, values):
    """Link poses as 4x4 matrices by explicit homogeneous chaining."""
    poses = [np.eye(4)]
    for (jtype, xyz, rpy, axis), q in zip(joints, values):
        roll, pitch, yaw = rpy
        origin = homogeneous(rot_about([0, 0, 1], yaw) @ rot_about([0, 1, 0], pitch) @ rot_about([1, 0, 0], roll),
                             xyz)
        axis = np.asarray(axis, float) / np.linalg.norm(axis)
        if jtype == "prismatic":
            motion = homogeneous(np.eye(3), axis * q)
        else:
            motion = homogeneous(rot_about(axis, q), np.zeros(3))
        poses.append(poses[-1] @ origin @ motion)
    return poses


def random_chain(rng, n=3, types=("revolute", "revolute", "prismatic")):
    return [(types[i % len(types)], rng.normal(size=3), rng.uniform(-math.pi, math.pi, 3), rng.normal(size=3))
            for i in range(n)]


class TestParse:
    def test_two_link_fixture(self):
        model = parse_urdf(TWO_LINK_URDF)
        assert model.link_names == ["base", "upper", "lower"]
        assert [j.name for j in model.joints] == ["shoulder", "elbow"]
        assert model.root == "base"
        assert model.joint("elbow").parent == "upper" and model.joint("elbow").child == "lower"
        assert model.link("upper").mesh == "meshes/upper.obj"
        assert model.joint("shoulder").limits == (-3.2, 3.2)

    def test_fixed_joint_excluded_from_configuration(self):
        text = TWO_LINK_URDF.replace('<joint name="elbow" type="revolute">', '<joint name="elbow" type="fixed">')
        model = parse_urdf(text)
        assert model.joint("elbow").type == "fixed"
        assert moving_joints(model) == ["shoulder"]
        with pytest.raises(URDFError):
            forward_kinematics(model, {"shoulder": 0.0, "elbow": 0.0})

    def test_zero_links(self):
        with pytest.raises(URDFError):
            parse_urdf('<robot name="empty"></robot>')

    def test_malformed_xml(self):
        with pytest.raises(URDFError):
            parse_urdf("<robot><link name='a'></robot>")

    def test_cycle(self):
        text = """<robot name="c"><link name="a"/><link name="b"/>
          <joint name="j1" type="fixed"><parent link="a"/><child link="b"/></joint>
          <joint name="j2" type="fixed"><parent link="b"/><child link="a"/></joint></robot>"""
        with pytest.raises(URDFError):
            parse_urdf(text)

    def test_dangling_link(self):
        text = """<robot name="d"><link name="a"/>
          <joint name="j1" type="fixed"><parent link="a"/><child link="ghost"/></joint></robot>"""
        with pytest.raises(URDFError, match="undeclared"):
            parse_urdf(text)

    def test_multiple_roots(self):
        with pytest.raises(URDFError, match="multiple root"):
            parse_urdf('<robot name="m"><link name="a"/><link name="b"/></robot>')

    def test_unknown_joint_type(self):
        text = """<robot name="u"><link name="a"/><link name="b"/>
          <joint name="j" type="floating"><parent link="a"/><child link="b"/></joint></robot>"""
        with pytest.raises(URDFError, match="unsupported type"):
            parse_urdf(text)

    def test_axes_are_normalized(self):
        model = parse_urdf(chain_urdf([("revolute", (0, 0, 0), (0, 0, 0), (3.0, 4.0, 0.0))]))
        np.testing.assert_allclose(np.linalg.norm(model.joint("j1").axis), 1.0, atol=1e-12)

    def test_unsupported_elements_skipped(self, caplog):
        text = TWO_LINK_URDF.replace('<link name="base"/>',
                                     '<link name="base"><inertial/><collision/></link><gazebo/>')
        model = parse_urdf(text)
        assert len(model.links) == 3
        assert any("ignoring" in r.message for r in caplog.records)


class TestForwardKinematics:
    def test_zero_configuration_chains_origins(self):
        model = parse_urdf(TWO_LINK_URDF)
        poses = forward_kinematics(model, {"shoulder": 0.0, "elbow": 0.0})
        np.testing.assert_array_equal(poses["base"].as_matrix(), np.eye(4))
        np.testing.assert_allclose(poses["lower"].translation, [1.0, 0.0, 0.0], atol=1e-15)

    def test_quarter_turn_maps_x_to_y(self):
        model = parse_urdf(TWO_LINK_URDF)
        poses = forward_kinematics(model, {"shoulder": math.pi / 2, "elbow": 0.0})
        np.testing.assert_allclose(poses["upper"].rotation @ [1, 0, 0], [0, 1, 0], atol=1e-15)
        np.testing.assert_allclose(poses["lower"].translation, [0, 1, 0], atol=1e-15)

    def test_planar_two_link_analytic(self, rng):
        # elbow at (cos a, sin a), lower link frame rotated by a + b
        model = parse_urdf(TWO_LINK_URDF)
        for a, b in rng.uniform(-3, 3, (50, 2)):
            poses = forward_kinematics(model, {"shoulder": a, "elbow": b})
            np.testing.assert_allclose(poses["lower"].translation, [math.cos(a), math.sin(a), 0], atol=1e-10)
            tip = poses["lower"].apply(np.array([1.0, 0.0, 0.0]))
            np.testing.assert_allclose(tip, [math.cos(a) + math.cos(a + b), math.sin(a) + math.sin(a + b), 0],
                                       atol=1e-10)

    def test_matches_homogeneous_chain(self, rng):
        for _ in range(20):
            joints = random_chain(rng)
            model = parse_urdf(chain_urdf(joints))
            values = rng.uniform(-2, 2, 3)
            poses = forward_kinematics(model, {f"j{i + 1}": v for i, v in enumerate(values)})
            for i, expect in enumerate(chain_oracle(joints, values)):
                np.testing.assert_allclose(poses[f"l{i}"].as_matrix(), expect, atol=1e-10, rtol=0)

    def test_root_equivariance_exact(self, rng):
        # a signed-permutation rotation only reorders and negates terms, so results match bit for bit
        joints = random_chain(rng)
        model = parse_urdf(chain_urdf(joints))
        config = {f"j{i + 1}": v for i, v in enumerate(rng.uniform(-2, 2, 3))}
        g = Rigid3(np.array([[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]]), np.zeros(3))
        plain = forward_kinematics(model, config)
        moved = forward_kinematics(model, config, base=g)
        for name, pose in plain.items():
            expect = g @ pose
            np.testing.assert_array_equal(moved[name].rotation, expect.rotation)
            np.testing.assert_array_equal(moved[name].translation, expect.translation)

    def test_root_equivariance_general(self, rng):
        joints = random_chain(rng)
        model = parse_urdf(chain_urdf(joints))
        config = {f"j{i + 1}": v for i, v in enumerate(rng.uniform(-2, 2, 3))}
        g = random_rigid(rng)
        plain = forward_kinematics(model, config)
        moved = forward_kinematics(model, config, base=g)
        for name, pose in plain.items():
            np.testing.assert_allclose(moved[name].as_matrix(), (g @ pose).as_matrix(), atol=1e-12, rtol=0)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(0, 2), st.integers(-3, 3))
    def test_revolute_periodicity(self, seed, which, turns):
        rng = np.random.default_rng(seed)
        joints = random_chain(rng, types=("revolute", "continuous"))
        model = parse_urdf(chain_urdf(joints))
        values = rng.uniform(-2, 2, 3)
        shifted = values.copy()
        shifted[which] += 2 * math.pi * turns
        a = forward_kinematics(model, {f"j{i + 1}": v for i, v in enumerate(values)})
        b = forward_kinematics(model, {f"j{i + 1}": v for i, v in enumerate(shifted)})
        for name in a:
            np.testing.assert_allclose(a[name].as_matrix(), b[name].as_matrix(), atol=1e-9)

    def test_pure_function_of_configuration(self, rng):
        joints = random_chain(rng)
        model = parse_urdf(chain_urdf(joints))
        c1 = {f"j{i + 1}": v for i, v in enumerate(rng.uniform(-2, 2, 3))}
        c2 = {f"j{i + 1}": v for i, v in enumerate(rng.uniform(-2, 2, 3))}
        first = forward_kinematics(model, c1)
        forward_kinematics(model, c2)
        again = forward_kinematics(model, c1)
        for name in first:
            np.testing.assert_array_equal(first[name].as_matrix(), again[name].as_matrix())

    def test_missing_value(self):
        model = parse_urdf(TWO_LINK_URDF)
        with pytest.raises(URDFError, match="lacks a value"):
            forward_kinematics(model, {"shoulder": 0.0})

    def test_unknown_joint(self):
        model = parse_urdf(TWO_LINK_URDF)
        with pytest.raises(URDFError, match="unknown joint"):
            forward_kinematics(model, {"shoulder": 0.0, "elbow": 0.0, "wrist": 1.0})

    def test_out_of_limit_clamps_with_warning(self, caplog):
        model = parse_urdf(TWO_LINK_URDF)
        out = clamp_configuration(model, {"shoulder": 5.0, "elbow": -0.1})
        assert out == {"shoulder": 3.2, "elbow": -0.1}
        assert any("clamping" in r.message for r in caplog.records)


class TestMovingJoints:
    def test_declaration_order(self):
        assert moving_joints(parse_urdf(TWO_LINK_URDF)) == ["shoulder", "elbow"]

    def test_all_fixed(self):
        text = """<robot name="f"><link name="a"/><link name="b"/>
          <joint name="j" type="fixed"><parent link="a"/><child link="b"/></joint></robot>"""
        assert moving_joints(parse_urdf(text)) == []

    def test_branched_tree_order(self):
        # children declared before their parents; ties resolved by declaration order
        text = """<robot name="tree">
          <link name="root"/><link name="l"/><link name="r"/><link name="l2"/><link name="r2"/>
          <joint name="left_tip" type="revolute"><parent link="l"/><child link="l2"/><axis xyz="0 0 1"/></joint>
          <joint name="right" type="revolute"><parent link="root"/><child link="r"/><axis xyz="0 0 1"/></joint>
          <joint name="right_tip" type="revolute"><parent link="r"/><child link="r2"/><axis xyz="0 0 1"/></joint>
          <joint name="left" type="revolute"><parent link="root"/><child link="l"/><axis xyz="0 0 1"/></joint>
        </robot>"""
        order = moving_joints(parse_urdf(text))
        assert order == ["right", "right_tip", "left", "left_tip"]
