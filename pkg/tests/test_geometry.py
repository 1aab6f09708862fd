import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from armsplat.geometry import (
    IDENTITY_6D,
    Rigid3,
    SingularityError,
    axis_angle_matrix,
    bernstein_basis,
    bernstein_matrix,
    bezier_eval,
    matrix_to_quat,
    quat_to_matrix,
    quat_to_matrix_backward,
    quaternion_rotate,
    rigid_compose,
    rotation_from_6d,
    rotation_from_6d_backward,
    rotation_to_6d,
    rpy_matrix,
)

from conftest import homogeneous, random_rigid, random_rotation, rot_about


def de_casteljau(points, t):
    pts = [np.asarray(p, dtype=float) for p in points]
    while len(pts) > 1:
        pts = [(1 - t) * a + t * b for a, b in zip(pts[:-1], pts[1:])]
    return pts[0]


finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)
unit_t = st.floats(0.0, 1.0)


class TestBernstein:
    def test_endpoint(self):
        assert bernstein_basis(0, 1, 0.0) == 1.0

    def test_binomial_value(self):
        assert bernstein_basis(2, 4, 0.5) == pytest.approx(0.375, abs=1e-15)

    def test_partition_of_unity_degree_19(self):
        total = sum(bernstein_basis(k, 19, 0.37) for k in range(20))
        assert abs(total - 1.0) < 1e-12

    def test_matrix_matches_scalar(self, rng):
        t = rng.random(7)
        m = bernstein_matrix(6, t)
        for i, ti in enumerate(t):
            for k in range(7):
                assert m[i, k] == pytest.approx(math.comb(6, k) * ti**k * (1 - ti) ** (6 - k), abs=1e-15)

    def test_partition_of_unity_all_degrees(self, rng):
        t = rng.random(100)
        for degree in range(1, 20):
            np.testing.assert_allclose(bernstein_matrix(degree, t).sum(axis=1), 1.0, atol=1e-12, rtol=0)

    @pytest.mark.parametrize("k,K,t", [(-1, 3, 0.5), (4, 3, 0.5), (1, 3, 1.5), (1, 3, -0.1)])
    def test_rejects_bad_arguments(self, k, K, t):
        with pytest.raises(ValueError):
            bernstein_basis(k, K, t)


class TestBezierEval:
    def test_constant_curve(self, rng):
        p = rng.normal(size=3)
        pts = np.tile(p, (6, 1))
        for t in (0.0, 0.3, 1.0):
            np.testing.assert_allclose(bezier_eval(pts, t), p, atol=1e-14)

    def test_endpoints(self, rng):
        pts = rng.normal(size=(5, 4))
        np.testing.assert_array_equal(bezier_eval(pts, 0.0), pts[0])
        np.testing.assert_allclose(bezier_eval(pts, 1.0), pts[-1], atol=1e-15)

    def test_matches_de_casteljau(self, rng):
        pts = rng.normal(size=(20, 9))
        np.testing.assert_allclose(bezier_eval(pts, 0.5), de_casteljau(pts, 0.5), atol=1e-12, rtol=0)
        for t in rng.random(20):
            np.testing.assert_allclose(bezier_eval(pts, t), de_casteljau(pts, t), atol=1e-12, rtol=0)

    def test_too_few_points(self):
        with pytest.raises(ValueError):
            bezier_eval(np.zeros((1, 3)), 0.5)

    @settings(max_examples=60, deadline=None)
    @given(arrays(np.float64, (8, 3), elements=finite), arrays(np.float64, (3, 3), elements=finite),
           arrays(np.float64, 3, elements=finite), unit_t)
    def test_affine_invariance(self, pts, a, b, t):
        lhs = bezier_eval(pts, t) @ a.T + b
        rhs = bezier_eval(pts @ a.T + b, t)
        np.testing.assert_allclose(lhs, rhs, atol=1e-10, rtol=0)


class TestRotation6D:
    def test_canonical_is_identity(self):
        np.testing.assert_array_equal(rotation_from_6d(IDENTITY_6D), np.eye(3))

    def test_scaled_canonical_is_identity(self):
        np.testing.assert_allclose(rotation_from_6d([2, 0, 0, 0, 3, 0]), np.eye(3), atol=1e-15)

    def test_random_is_orthonormal(self, rng):
        for r6 in rng.normal(size=(200, 6)):
            r = rotation_from_6d(r6)
            np.testing.assert_allclose(r.T @ r, np.eye(3), atol=1e-9, rtol=0)
            assert abs(np.linalg.det(r) - 1.0) < 1e-9

    def test_columns_convention(self, rng):
        r = random_rotation(rng)
        np.testing.assert_allclose(rotation_to_6d(r), np.concatenate([r[:, 0], r[:, 1]]))

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_round_trip_on_so3(self, seed):
        r = random_rotation(np.random.default_rng(seed))
        np.testing.assert_allclose(rotation_from_6d(rotation_to_6d(r)), r, atol=1e-9, rtol=0)

    def test_degenerate_inputs(self):
        with pytest.raises(SingularityError):
            rotation_from_6d([0, 0, 0, 0, 1, 0])
        with pytest.raises(SingularityError):
            rotation_from_6d([1, 0, 0, 2, 0, 0])

    def test_backward_matches_finite_differences(self, rng):
        r6 = rng.normal(size=(4, 6))
        g = rng.normal(size=(4, 3, 3))
        analytic = rotation_from_6d_backward(r6, g)
        h = 1e-6
        numeric = np.zeros_like(r6)
        for idx in np.ndindex(r6.shape):
            p, m = r6.copy(), r6.copy()
            p[idx] += h
            m[idx] -= h
            numeric[idx] = (np.sum(rotation_from_6d(p) * g) - np.sum(rotation_from_6d(m) * g)) / (2 * h)
        np.testing.assert_allclose(analytic, numeric, rtol=1e-6, atol=1e-8)


class TestRigidCompose:
    def test_identity(self, rng):
        t = random_rigid(rng)
        out = rigid_compose(Rigid3.identity(), t)
        np.testing.assert_array_equal(out.rotation, t.rotation)
        np.testing.assert_array_equal(out.translation, t.translation)

    def test_translations_add(self):
        a = Rigid3(np.eye(3), [1, 2, 3])
        b = Rigid3(np.eye(3), [0.5, -1, 4])
        np.testing.assert_array_equal(rigid_compose(a, b).translation, [1.5, 1, 7])

    def test_matches_homogeneous_product(self, rng):
        for _ in range(100):
            a, b = random_rigid(rng), random_rigid(rng)
            expect = homogeneous(a.rotation, a.translation) @ homogeneous(b.rotation, b.translation)
            np.testing.assert_allclose(rigid_compose(a, b).as_matrix(), expect, atol=1e-12, rtol=0)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_associative(self, seed):
        rng = np.random.default_rng(seed)
        a, b, c = (random_rigid(rng) for _ in range(3))
        left = rigid_compose(rigid_compose(a, b), c).as_matrix()
        right = rigid_compose(a, rigid_compose(b, c)).as_matrix()
        np.testing.assert_allclose(left, right, atol=1e-12, rtol=0)

    def test_inverse(self, rng):
        t = random_rigid(rng)
        np.testing.assert_allclose((t @ t.inverse()).as_matrix(), np.eye(4), atol=1e-12)

    def test_apply(self, rng):
        t = random_rigid(rng)
        p = rng.normal(size=(5, 3))
        hom = np.c_[p, np.ones(5)] @ t.as_matrix().T
        np.testing.assert_allclose(t.apply(p), hom[:, :3], atol=1e-12)

    def test_validity(self, rng):
        assert random_rigid(rng).is_valid()
        assert not Rigid3(np.diag([1.0, 1.0, -1.0]), np.zeros(3)).is_valid()


class TestQuaternions:
    def test_identity_frame_keeps_quaternion(self, rng):
        q = rng.normal(size=4)
        q /= np.linalg.norm(q)
        q *= np.sign(q[0])
        np.testing.assert_allclose(quaternion_rotate(np.eye(3), q), q, atol=1e-12)

    def test_quarter_turn_about_z(self):
        rz = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
        q = quaternion_rotate(rz, [1.0, 0.0, 0.0, 0.0])
        s = math.sqrt(0.5)
        np.testing.assert_allclose(q, [s, 0, 0, s], atol=1e-12)

    def test_matrix_form(self, rng):
        for _ in range(50):
            frame = random_rotation(rng)
            q = rng.normal(size=4)
            out = quaternion_rotate(frame, q)
            assert abs(np.linalg.norm(out) - 1.0) < 1e-9
            np.testing.assert_allclose(quat_to_matrix(out), frame @ quat_to_matrix(q), atol=1e-9, rtol=0)

    def test_matrix_to_quat_round_trip(self, rng):
        rots = np.stack([random_rotation(rng) for _ in range(200)])
        np.testing.assert_allclose(quat_to_matrix(matrix_to_quat(rots)), rots, atol=1e-12)

    def test_backward_matches_finite_differences(self, rng):
        q = rng.normal(size=(5, 4))
        g = rng.normal(size=(5, 3, 3))
        analytic = quat_to_matrix_backward(q, g)
        h = 1e-6
        numeric = np.zeros_like(q)
        for idx in np.ndindex(q.shape):
            p, m = q.copy(), q.copy()
            p[idx] += h
            m[idx] -= h
            numeric[idx] = (np.sum(quat_to_matrix(p) * g) - np.sum(quat_to_matrix(m) * g)) / (2 * h)
        np.testing.assert_allclose(analytic, numeric, rtol=1e-6, atol=1e-8)


class TestElementaryRotations:
    def test_axis_angle_matches_quaternion_form(self, rng):
        for _ in range(20):
            axis = rng.normal(size=3)
            axis /= np.linalg.norm(axis)
            angle = rng.uniform(-4, 4)
            np.testing.assert_allclose(axis_angle_matrix(axis, angle), rot_about(axis, angle), atol=1e-12)

    def test_rpy_is_fixed_axis_order(self):
        roll, pitch, yaw = 0.3, -0.7, 1.1
        expect = rot_about([0, 0, 1], yaw) @ rot_about([0, 1, 0], pitch) @ rot_about([1, 0, 0], roll)
        np.testing.assert_allclose(rpy_matrix(roll, pitch, yaw), expect, atol=1e-12)
