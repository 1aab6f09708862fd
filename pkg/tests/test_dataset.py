import json
import shutil

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from armsplat.dataset import (
    JointTrajectory,
    SceneError,
    load_scene,
    read_scene,
    save_scene,
    scene_violations,
    split_dataset,
    synchronize_joints,
)
from armsplat.images import load_float_image, load_png, save_float_image, save_png


def segment_scan(ts, values, t):
    """Brute-force piecewise-linear lookup."""
    if t <= ts[0]:
        return values[0]
    for i in range(len(ts) - 1):
        if ts[i] <= t <= ts[i + 1]:
            w = (t - ts[i]) / (ts[i + 1] - ts[i])
            return values[i] * (1 - w) + values[i + 1] * w
    return values[-1]


class TestSplit:
    def test_twenty_frames(self):
        train, val, test = split_dataset(20)
        assert test == [0, 10]
        assert val == [5, 15]
        assert train == [i for i in range(20) if i not in (0, 5, 10, 15)]

    def test_hundred_frames(self):
        train, val, test = split_dataset(100)
        assert (len(test), len(val), len(train)) == (10, 10, 80)

    def test_too_few(self):
        with pytest.raises(ValueError):
            split_dataset(19)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(20, 2000))
    def test_disjoint_and_exhaustive(self, n):
        train, val, test = split_dataset(n)
        assert sorted(train + val + test) == list(range(n))
        assert split_dataset(n) == (train, val, test)


class TestSynchronize:
    def test_at_knots(self):
        traj = JointTrajectory([0.0, 1.0, 2.0], ("a", "b"), [[0.1, -1.0], [0.7, 2.0], [0.3, 0.5]])
        out = synchronize_joints(traj, [0.0, 1.0, 2.0])
        assert out == [{"a": 0.1, "b": -1.0}, {"a": 0.7, "b": 2.0}, {"a": 0.3, "b": 0.5}]

    def test_midpoint(self):
        traj = JointTrajectory([0.0, 1.0], ("a",), [[0.0], [1.0]])
        assert synchronize_joints(traj, [0.5]) == [{"a": 0.5}]

    def test_matches_segment_scan(self, rng):
        ts = np.cumsum(rng.uniform(0.01, 0.3, 40))
        values = rng.normal(size=(40, 3))
        traj = JointTrajectory(ts, ("x", "y", "z"), values)
        query = rng.uniform(ts[0], ts[-1], 200)
        out = synchronize_joints(traj, query)
        for t, cfg in zip(query, out):
            expect = segment_scan(ts, values, t)
            np.testing.assert_allclose([cfg["x"], cfg["y"], cfg["z"]], expect, atol=1e-12)

    def test_clamped_outside_with_warning(self, caplog):
        traj = JointTrajectory([1.0, 2.0], ("a",), [[3.0], [4.0]])
        out = synchronize_joints(traj, [0.0, 5.0])
        assert out == [{"a": 3.0}, {"a": 4.0}]
        assert any("outside" in r.message for r in caplog.records)

    def test_non_monotonic(self):
        traj = JointTrajectory([0.0, 2.0, 1.0], ("a",), [[0.0], [1.0], [2.0]])
        with pytest.raises(ValueError):
            synchronize_joints(traj, [0.5])

    def test_csv_round_trip(self, rng):
        traj = JointTrajectory(np.sort(rng.random(5)), ("j,1", 'j"2'), rng.normal(size=(5, 2)))
        assert JointTrajectory.from_csv(traj.to_csv()) == traj

    def test_csv_incomplete_record(self):
        with pytest.raises(SceneError):
            JointTrajectory.from_csv("timestamp,name,value\n0.0,a,1\n0.0,b,2\n1.0,a,3\n")

    def test_csv_bad_header(self):
        with pytest.raises(SceneError):
            JointTrajectory.from_csv("time,joint,value\n")


class TestImages:
    def test_float_round_trip(self, tmp_path, rng):
        img = rng.random((7, 5, 3)).astype(np.float32).astype(np.float64)
        save_float_image(tmp_path / "a.f32", img)
        np.testing.assert_array_equal(load_float_image(tmp_path / "a.f32"), img)
        raw = (tmp_path / "a.f32").read_bytes()
        assert raw[:8] == b"ARMSPF32" and len(raw) == 16 + 7 * 5 * 3 * 4

    def test_float_rejects_other_files(self, tmp_path):
        (tmp_path / "x").write_bytes(b"not an image at all")
        with pytest.raises(ValueError):
            load_float_image(tmp_path / "x")

    def test_png_quantization(self, tmp_path, rng):
        img = rng.random((6, 4, 3))
        save_png(tmp_path / "a.png", img)
        back = load_png(tmp_path / "a.png")
        assert np.abs(back - img).max() <= 0.5 / 255 + 1e-12


class TestScenePackage:
    def test_round_trip(self, small_synthetic, tmp_path):
        scene = small_synthetic.scene
        save_scene(scene, tmp_path / "pkg")
        loaded = load_scene(tmp_path / "pkg")
        assert loaded == scene
        for name in ("manifest.json", "camera.json", "joints.csv", "robot.urdf", "split.json",
                     "frames/000000.png", "masks/000019.png", "meshes/link1.obj"):
            assert (tmp_path / "pkg" / name).is_file()

    def test_generator_output_is_valid(self, small_synthetic, caplog):
        assert scene_violations(small_synthetic.scene) == []
        assert not [r for r in caplog.records if r.levelname == "WARNING"]

    def test_short_joint_log(self, small_synthetic):
        scene = small_synthetic.scene
        traj = scene.trajectory
        short = JointTrajectory(traj.timestamps[:9], traj.names, traj.values[:9])
        frames = scene.frames[:10]
        broken = type(scene)(scene.name, scene.camera, scene.frame_times[:10], frames, short, scene.urdf,
                             scene.meshes, {"train": list(range(1, 10)), "val": [], "test": [0]})
        problems = scene_violations(broken)
        assert any("9 joint records for 10 frames" in p for p in problems)
        with pytest.raises(SceneError):
            broken.validate()

    def test_unknown_joint_name(self, small_synthetic):
        scene = small_synthetic.scene
        traj = scene.trajectory
        renamed = JointTrajectory(traj.timestamps, ("joint1", "joint2", "wrist"), traj.values)
        broken = type(scene)(scene.name, scene.camera, scene.frame_times, scene.frames, renamed, scene.urdf,
                             scene.meshes, scene.split)
        assert any("absent from the URDF" in p for p in scene_violations(broken))

    def test_missing_files_reported(self, small_synthetic, tmp_path):
        root = tmp_path / "pkg"
        save_scene(small_synthetic.scene, root)
        (root / "frames" / "000003.png").unlink()
        (root / "frames" / "000003.f32").unlink()
        shutil.rmtree(root / "meshes")
        _, problems = read_scene(root)
        assert "missing frame 3" in problems
        assert any("missing mesh file" in p for p in problems)
        with pytest.raises(SceneError):
            load_scene(root)

    def test_overlapping_split(self, small_synthetic, tmp_path):
        root = tmp_path / "pkg"
        save_scene(small_synthetic.scene, root)
        split = json.loads((root / "split.json").read_text())
        split["val"].append(split["test"][0])
        (root / "split.json").write_text(json.dumps(split))
        _, problems = read_scene(root)
        assert "split lists overlap" in problems

    def test_not_a_directory(self, tmp_path):
        scene, problems = read_scene(tmp_path / "nothing")
        assert scene is None and problems

    def test_normalized_times(self, small_synthetic):
        t = small_synthetic.scene.normalized_times()
        assert t[0] == 0.0 and t[-1] == 1.0
        np.testing.assert_allclose(t, np.arange(20) / 19, atol=1e-15)
