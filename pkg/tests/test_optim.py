import numpy as np
import pytest

from armsplat.optim import Adam, AdamState, adam_step


class TestAdamStep:
    def test_zero_gradient_keeps_params(self, rng):
        p = rng.normal(size=5)
        out = adam_step(p, np.zeros(5), AdamState.zeros_like(p), lr=0.1)
        np.testing.assert_array_equal(out, p)

    def test_first_step_by_hand(self):
        p = np.array([1.0, -2.0, 0.5])
        g = np.array([0.3, -0.01, 4.0])
        lr = 0.01
        # m = 0.1 g, v = 0.001 g^2; bias correction divides by 0.1 and 0.001
        expect = p - lr * g / (np.abs(g) + 1e-15)
        np.testing.assert_allclose(adam_step(p, g, AdamState.zeros_like(p), lr), expect, rtol=0, atol=1e-15)

    def test_second_step_by_hand(self):
        p = np.array([0.2])
        g1, g2 = np.array([1.0]), np.array([-0.5])
        state = AdamState.zeros_like(p)
        p1 = adam_step(p, g1, state, 0.1)
        p2 = adam_step(p1, g2, state, 0.1)
        m = 0.9 * 0.1 * g1 + 0.1 * g2
        v = 0.999 * 0.001 * g1**2 + 0.001 * g2**2
        expect = p1 - 0.1 * (m / (1 - 0.81)) / (np.sqrt(v / (1 - 0.999**2)) + 1e-15)
        np.testing.assert_allclose(p2, expect, rtol=1e-14)
        assert state.step == 2

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            adam_step(np.zeros(3), np.zeros(4), AdamState.zeros_like(np.zeros(3)), 0.1)

    def test_weight_decay_shrinks(self):
        p = np.array([2.0, -1.0])
        out = adam_step(p, np.zeros(2), AdamState.zeros_like(p), 0.0015, weight_decay=1e-4)
        np.testing.assert_allclose(out, p * (1 - 0.0015 * 1e-4), rtol=1e-15)


class TestAdamGroups:
    def test_decay_only_touches_its_group(self, rng):
        opt = Adam({"curve": 0.0015, "mu": 0.01}, weight_decay={"curve": 1e-4})
        params = {"curve": rng.normal(size=(4, 9)), "mu": rng.normal(size=(10, 3))}
        out = opt.step(params, {"curve": np.zeros((4, 9)), "mu": np.zeros((10, 3))})
        np.testing.assert_array_equal(out["mu"], params["mu"])
        assert np.all(out["curve"] != params["curve"])

    def test_per_group_rates(self):
        opt = Adam({"a": 0.1, "b": 0.001})
        out = opt.step({"a": np.zeros(1), "b": np.zeros(1)}, {"a": np.ones(1), "b": np.ones(1)})
        np.testing.assert_allclose(out["a"], -0.1)
        np.testing.assert_allclose(out["b"], -0.001)

    def test_remap_rows(self):
        opt = Adam({"mu": 0.1})
        opt.step({"mu": np.zeros((3, 2))}, {"mu": np.arange(6.0).reshape(3, 2)})
        before = opt.states["mu"].m.copy()
        opt.remap_rows(["mu", "missing"], np.array([2, -1, 0, 0]))
        m = opt.states["mu"].m
        np.testing.assert_array_equal(m[0], before[2])
        np.testing.assert_array_equal(m[1], 0.0)
        np.testing.assert_array_equal(m[2:], before[[0, 0]])
        assert opt.states["mu"].v.shape == (4, 2)
