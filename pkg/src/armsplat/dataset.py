"""Scene packages on disk: frames, masks, camera, joint log, URDF, meshes, split.

Layout::

    manifest.json   camera.json   joints.csv   robot.urdf   split.json
    frames/000000.png (+ 000000.f32 float dump)   masks/000000.png
    meshes/<link>.obj   (paths as referenced by the URDF)
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path, PurePosixPath

import numpy as np

from .binding import LinkMesh, MeshError, format_obj, parse_obj
from .images import load_float_image, load_png, save_float_image, save_png
from .renderer import Camera
from .urdf import KinematicModel, URDFError, moving_joints, parse_urdf

logger = logging.getLogger(__name__)

MIN_SPLIT_FRAMES = 20


class SceneError(ValueError):
    """A scene package is missing files or violates its invariants."""

    def __init__(self, violations):
        self.violations = list(violations) if not isinstance(violations, str) else [violations]
        super().__init__("; ".join(self.violations))


# -- joint trajectory ---------------------------------------------------------

@dataclass(eq=False)
class JointTrajectory:
    """Timestamped joint records; every record carries a value for every joint."""

    timestamps: np.ndarray  # (M,)
    names: tuple[str, ...]
    values: np.ndarray  # (M, J)

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=np.float64).reshape(-1)
        self.values = np.asarray(self.values, dtype=np.float64).reshape(len(self.timestamps), len(self.names))
        self.names = tuple(self.names)

    def __len__(self) -> int:
        return len(self.timestamps)

    def __eq__(self, other) -> bool:
        return (isinstance(other, JointTrajectory) and self.names == other.names
                and np.array_equal(self.timestamps, other.timestamps) and np.array_equal(self.values, other.values))

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["timestamp", "name", "value"])
        for i, ts in enumerate(self.timestamps):
            for j, name in enumerate(self.names):
                writer.writerow([repr(float(ts)), name, repr(float(self.values[i, j]))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "JointTrajectory":
        reader = csv.reader(io.StringIO(text))
        header = next(reader, None)
        if header != ["timestamp", "name", "value"]:
            raise SceneError(f"joints.csv header must be timestamp,name,value (got {header})")
        records: dict[float, dict[str, float]] = {}
        order: list[float] = []
        names: list[str] = []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise SceneError(f"joints.csv line {line_no}: expected 3 fields")
            try:
                ts, value = float(row[0]), float(row[2])
            except ValueError:
                raise SceneError(f"joints.csv line {line_no}: non-numeric field") from None
            if row[1] not in names:
                names.append(row[1])
            if ts not in records:
                records[ts] = {}
                order.append(ts)
            records[ts][row[1]] = value
        incomplete = [ts for ts in order if len(records[ts]) != len(names)]
        if incomplete:
            raise SceneError(f"joints.csv: record at t={incomplete[0]!r} lacks some joints")
        values = np.array([[records[ts][n] for n in names] for ts in order]).reshape(len(order), len(names))
        return cls(np.array(order), tuple(names), values)


def synchronize_joints(trajectory: JointTrajectory, frame_times) -> list[dict[str, float]]:
    """Per-frame joint values by independent linear interpolation of each joint."""
    ts = trajectory.timestamps
    if len(ts) == 0:
        raise ValueError("empty joint trajectory")
    if np.any(np.diff(ts) <= 0):
        raise ValueError("joint timestamps must be strictly increasing")
    frame_times = np.asarray(frame_times, dtype=np.float64).reshape(-1)
    outside = (frame_times < ts[0]) | (frame_times > ts[-1])
    if np.any(outside):
        logger.warning("%d frame times fall outside the joint log; holding the end values", int(outside.sum()))
    cols = [np.interp(frame_times, ts, trajectory.values[:, j]) for j in range(len(trajectory.names))]
    return [{name: float(cols[j][i]) for j, name in enumerate(trajectory.names)} for i in range(len(frame_times))]


def split_dataset(frame_count: int) -> tuple[list[int], list[int], list[int]]:
    """Every tenth frame (offset 0) for test, every tenth (offset 5) for validation."""
    if frame_count < MIN_SPLIT_FRAMES:
        raise ValueError(f"need at least {MIN_SPLIT_FRAMES} frames to split, got {frame_count}")
    idx = range(frame_count)
    test = [i for i in idx if i % 10 == 0]
    val = [i for i in idx if i % 10 == 5]
    train = [i for i in idx if i % 10 not in (0, 5)]
    return train, val, test


# -- package -------------------------------------------------------------------

@dataclass(eq=False)
class ScenePackage:
    name: str
    camera: Camera
    frame_times: np.ndarray
    frames: list[np.ndarray]  # (H, W, 3) in [0, 1]
    trajectory: JointTrajectory
    urdf: str
    meshes: dict[str, LinkMesh]
    split: dict[str, list[int]]
    background: np.ndarray = field(default_factory=lambda: np.zeros(3))
    masks: list[np.ndarray] | None = None

    def __post_init__(self):
        self.frame_times = np.asarray(self.frame_times, dtype=np.float64).reshape(-1)
        self.background = np.asarray(self.background, dtype=np.float64).reshape(3)

    @property
    def frame_count(self) -> int:
        return len(self.frames)

    @property
    def width(self) -> int:
        return self.camera.width

    @property
    def height(self) -> int:
        return self.camera.height

    @property
    def model(self) -> KinematicModel:
        return parse_urdf(self.urdf)

    def joint_configs(self) -> list[dict[str, float]]:
        return synchronize_joints(self.trajectory, self.frame_times)

    def normalized_times(self) -> np.ndarray:
        """Frame times mapped to [0, 1] over the sequence."""
        t = self.frame_times
        span = t[-1] - t[0]
        return np.zeros_like(t) if span <= 0 else (t - t[0]) / span

    def validate(self) -> None:
        problems = scene_violations(self)
        if problems:
            raise SceneError(problems)

    def __eq__(self, other) -> bool:
        if not isinstance(other, ScenePackage):
            return NotImplemented
        if (self.name, self.urdf, self.split) != (other.name, other.urdf, other.split):
            return False
        if self.camera.to_dict() != other.camera.to_dict() or self.trajectory != other.trajectory:
            return False
        if not (np.array_equal(self.frame_times, other.frame_times)
                and np.array_equal(self.background, other.background)):
            return False
        if len(self.frames) != len(other.frames) or not all(
                np.array_equal(a, b) for a, b in zip(self.frames, other.frames)):
            return False
        if (self.masks is None) != (other.masks is None):
            return False
        if self.masks is not None and not all(np.array_equal(a, b) for a, b in zip(self.masks, other.masks)):
            return False
        if self.meshes.keys() != other.meshes.keys():
            return False
        return all(np.array_equal(m.vertices, other.meshes[k].vertices) and np.array_equal(m.faces, other.meshes[k].faces)
                   for k, m in self.meshes.items())


def scene_violations(scene: ScenePackage) -> list[str]:
    """Every invariant the package breaks (empty when valid)."""
    problems: list[str] = []
    n = scene.frame_count
    if n == 0:
        problems.append("package has no frames")
    if len(scene.frame_times) != n:
        problems.append(f"{len(scene.frame_times)} frame times for {n} frames")
    elif n > 1 and np.any(np.diff(scene.frame_times) <= 0):
        problems.append("frame times are not strictly increasing")
    for i, frame in enumerate(scene.frames):
        if frame.shape != (scene.height, scene.width, 3):
            problems.append(f"frame {i} has shape {frame.shape}, expected {(scene.height, scene.width, 3)}")
            break
    if scene.masks is not None:
        if len(scene.masks) != n:
            problems.append(f"{len(scene.masks)} masks for {n} frames")
        elif any(m.shape != (scene.height, scene.width) for m in scene.masks):
            problems.append("mask size does not match the frames")
    if len(scene.trajectory) < n:
        problems.append(f"{len(scene.trajectory)} joint records for {n} frames")
    if len(scene.trajectory) and np.any(np.diff(scene.trajectory.timestamps) <= 0):
        problems.append("joint timestamps are not strictly increasing")

    try:
        model = parse_urdf(scene.urdf)
    except URDFError as exc:
        problems.append(f"invalid URDF: {exc}")
        model = None
    if model is not None:
        moving = set(moving_joints(model))
        unknown = [j for j in scene.trajectory.names if j not in moving]
        if unknown:
            problems.append(f"joint log names joints absent from the URDF: {unknown}")
        missing = [j for j in moving if j not in scene.trajectory.names]
        if missing:
            problems.append(f"joint log lacks values for {missing}")
        for link in model.links:
            if link.mesh is not None and link.name not in scene.meshes:
                problems.append(f"mesh for link {link.name!r} is missing")
        extra = set(scene.meshes) - set(model.link_names)
        if extra:
            problems.append(f"meshes for unknown links: {sorted(extra)}")
    for name, mesh in scene.meshes.items():
        try:
            mesh.validate()
        except MeshError as exc:
            problems.append(f"mesh {name!r}: {exc}")

    keys = {"train", "val", "test"}
    if set(scene.split) != keys:
        problems.append(f"split must have exactly the lists {sorted(keys)}")
    else:
        flat = [i for k in ("train", "val", "test") for i in scene.split[k]]
        if len(set(flat)) != len(flat):
            problems.append("split lists overlap")
        if sorted(set(flat)) != list(range(n)):
            problems.append("split lists do not cover all frames exactly")
    return problems


def _mesh_path(link, filename: str | None) -> str:
    rel = PurePosixPath(filename or f"meshes/{link}.obj")
    if rel.is_absolute() or ".." in rel.parts:
        raise SceneError(f"mesh path {filename!r} escapes the package")
    return str(rel)


def save_scene(scene: ScenePackage, path) -> None:
    root = Path(path)
    (root / "frames").mkdir(parents=True, exist_ok=True)
    manifest = {
        "name": scene.name,
        "frame_count": scene.frame_count,
        "width": scene.width,
        "height": scene.height,
        "background": [float(v) for v in scene.background],
        "frame_times": [float(v) for v in scene.frame_times],
        "masks": scene.masks is not None,
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    (root / "camera.json").write_text(json.dumps(scene.camera.to_dict(), indent=2) + "\n")
    (root / "joints.csv").write_text(scene.trajectory.to_csv(), encoding="utf-8")
    (root / "robot.urdf").write_text(scene.urdf)
    (root / "split.json").write_text(json.dumps(scene.split) + "\n")
    for i, frame in enumerate(scene.frames):
        save_png(root / "frames" / f"{i:06d}.png", frame)
        save_float_image(root / "frames" / f"{i:06d}.f32", frame)
    if scene.masks is not None:
        (root / "masks").mkdir(exist_ok=True)
        for i, mask in enumerate(scene.masks):
            save_png(root / "masks" / f"{i:06d}.png", mask.astype(np.float64))
    model = parse_urdf(scene.urdf)
    for link in model.links:
        if link.name in scene.meshes:
            target = root / _mesh_path(link.name, link.mesh)
            target.parent.mkdir(parents=True, exist_ok=True)
            target.write_text(format_obj(scene.meshes[link.name]))


def _read(root: Path, name: str, problems: list[str]) -> str | None:
    p = root / name
    if not p.is_file():
        problems.append(f"missing {name}")
        return None
    return p.read_text(encoding="utf-8")


def read_scene(path) -> tuple[ScenePackage | None, list[str]]:
    """Load without raising; returns the package (if readable) and all problems found."""
    root = Path(path)
    problems: list[str] = []
    if not root.is_dir():
        return None, [f"{root} is not a directory"]
    texts = {name: _read(root, name, problems)
             for name in ("manifest.json", "camera.json", "joints.csv", "robot.urdf", "split.json")}
    if any(v is None for v in texts.values()):
        return None, problems
    try:
        manifest = json.loads(texts["manifest.json"])
        camera = Camera.from_dict(json.loads(texts["camera.json"]))
        split = {k: [int(i) for i in v] for k, v in json.loads(texts["split.json"]).items()}
        trajectory = JointTrajectory.from_csv(texts["joints.csv"])
        n = int(manifest["frame_count"])
    except SceneError as exc:
        return None, problems + exc.violations
    except (ValueError, KeyError, TypeError) as exc:
        return None, problems + [f"unreadable metadata: {exc}"]

    frames = []
    for i in range(n):
        dump, png = root / "frames" / f"{i:06d}.f32", root / "frames" / f"{i:06d}.png"
        if dump.is_file():
            frames.append(load_float_image(dump))
        elif png.is_file():
            frames.append(load_png(png))
        else:
            problems.append(f"missing frame {i}")
    masks = None
    if manifest.get("masks"):
        masks = []
        for i in range(n):
            p = root / "masks" / f"{i:06d}.png"
            if p.is_file():
                m = load_png(p)
                masks.append((m if m.ndim == 2 else m.mean(axis=2)) > 0.5)
            else:
                problems.append(f"missing mask {i}")

    meshes: dict[str, LinkMesh] = {}
    try:
        model = parse_urdf(texts["robot.urdf"])
    except URDFError:
        model = None  # reported by scene_violations
    if model is not None:
        for link in model.links:
            if link.mesh is None:
                continue
            try:
                p = root / _mesh_path(link.name, link.mesh)
            except SceneError as exc:
                problems.extend(exc.violations)
                continue
            if not p.is_file():
                problems.append(f"missing mesh file {link.mesh}")
                continue
            try:
                meshes[link.name] = parse_obj(p.read_text(), link.name)
            except MeshError as exc:
                problems.append(f"mesh {link.mesh}: {exc}")

    scene = ScenePackage(
        name=str(manifest.get("name", root.name)),
        camera=camera,
        frame_times=manifest.get("frame_times", list(range(n))),
        frames=frames,
        trajectory=trajectory,
        urdf=texts["robot.urdf"],
        meshes=meshes,
        split=split,
        background=manifest.get("background", [0.0, 0.0, 0.0]),
        masks=masks,
    )
    if (manifest.get("width"), manifest.get("height")) != (camera.width, camera.height):
        problems.append("manifest resolution disagrees with the camera")
    problems.extend(p for p in scene_violations(scene) if p not in problems)
    return scene, problems


def load_scene(path) -> ScenePackage:
    """Load and validate a scene package; raises :class:`SceneError` listing every violation."""
    scene, problems = read_scene(path)
    if problems:
        raise SceneError(problems)
    return scene
