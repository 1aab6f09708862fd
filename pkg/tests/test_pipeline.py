import numpy as np

from armsplat.pipeline import ArmRig, backward_frame, render_frame


class TestChainGradients:
    """Image gradients pushed back to local attributes, curve and embeddings."""

    def setup_method(self):
        self.rng = np.random.default_rng(8)

    def test_matches_finite_differences(self, small_synthetic):
        scene = small_synthetic.scene
        rig = ArmRig.from_meshes(scene.model, scene.meshes)
        params = small_synthetic.truth.params.copy()
        params.curve.control_points += self.rng.normal(0, 0.01, params.curve.control_points.shape)
        params.gaussians.opacity_logit[:] = 0.0  # partly transparent, so every layer matters
        cfg = scene.joint_configs()[7]
        t = float(scene.normalized_times()[7])
        upstream = self.rng.normal(size=(scene.height, scene.width, 3))

        def objective(p):
            return float(np.sum(render_frame(rig, p, cfg, t, scene.camera, scene.background).pixels * upstream))

        _, cache = render_frame(rig, params, cfg, t, scene.camera, scene.background, return_cache=True)
        grads = backward_frame(rig, params, cache, upstream)

        def check(getter, analytic, indices, h, floor=1e-5):
            for idx in indices:
                plus, minus = params.copy(), params.copy()
                getter(plus)[idx] += h
                getter(minus)[idx] -= h
                fd = (objective(plus) - objective(minus)) / (2 * h)
                assert abs(analytic[idx] - fd) <= 1e-3 * max(abs(fd), floor), (idx, analytic[idx], fd)

        n = len(params.gaussians)
        picks = self.rng.choice(n, 6, replace=False)
        check(lambda p: p.gaussians.mu, grads.local.mu, [(i, a) for i in picks for a in range(3)], 1e-6)
        check(lambda p: p.gaussians.opacity_logit, grads.local.opacity_logit, [(i,) for i in picks], 1e-6)
        check(lambda p: p.gaussians.log_scale, grads.local.log_scale, [(i, 0) for i in picks], 1e-6)
        # Moving a whole link drags hundreds of Gaussians, so thousands of pixel footprints slide across the
        # 1/255 alpha cutoff; at this scene size a jump lands roughly every 1e-7 of parameter change. The
        # step stays below that, and the floor covers the resulting roundoff.
        motion = dict(h=1e-8, floor=0.1)
        check(lambda p: p.embeddings.values, grads.embeddings, list(np.ndindex(params.embeddings.values.shape)),
              **motion)
        check(lambda p: p.curve.control_points, grads.control_points, [(k, c) for k in (0, 7, 19) for c in range(9)],
              **motion)

    def test_motion_gradients_skippable(self, small_synthetic):
        scene = small_synthetic.scene
        rig = ArmRig.from_meshes(scene.model, scene.meshes)
        params = small_synthetic.truth.params
        cfg = scene.joint_configs()[0]
        _, cache = render_frame(rig, params, cfg, 0.0, scene.camera, scene.background, return_cache=True)
        grads = backward_frame(rig, params, cache, np.ones((scene.height, scene.width, 3)), need_motion=False)
        assert np.all(grads.control_points == 0) and np.all(grads.embeddings == 0)

    def test_scene_extent(self, small_synthetic):
        scene = small_synthetic.scene
        rig = ArmRig.from_meshes(scene.model, scene.meshes)
        v = rig.rest_vertices()
        brute = max(np.linalg.norm(p - v.mean(axis=0)) for p in v)
        assert rig.scene_extent() == 1.1 * brute
