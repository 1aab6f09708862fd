"""Single-file checkpoints: a zip of ``.npy`` arrays plus a JSON header.

Entries carry a fixed timestamp and are written in sorted order, so equal
contents give byte-identical files. Writes go to a temporary file that is
then renamed over the target.
"""

from __future__ import annotations

import io
import json
import os
import tempfile
import zipfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .binding import GaussianSet
from .optim import AdamState
from .pipeline import ArmParams
from .refiner import BezierResidual, JointEmbeddings

FORMAT_VERSION = 1
_EPOCH = (1980, 1, 1, 0, 0, 0)
_GAUSSIAN_FIELDS = ("face", "mu", "quat", "log_scale", "opacity_logit", "sh")


class CheckpointError(ValueError):
    """Unreadable or inconsistent checkpoint file."""


@dataclass(eq=False)
class Checkpoint:
    params: ArmParams
    iteration: int = 0
    config: dict = field(default_factory=dict)
    optimizer: dict[str, AdamState] = field(default_factory=dict)


def _npy_bytes(arr: np.ndarray) -> bytes:
    buf = io.BytesIO()
    np.save(buf, np.ascontiguousarray(arr), allow_pickle=False)
    return buf.getvalue()


def checkpoint_bytes(ckpt: Checkpoint) -> bytes:
    p = ckpt.params
    arrays = {f"gaussians/{k}": getattr(p.gaussians, k) for k in _GAUSSIAN_FIELDS}
    arrays["curve/control_points"] = p.curve.control_points
    arrays["embeddings/values"] = p.embeddings.values
    for name, st in ckpt.optimizer.items():
        arrays[f"optimizer/{name}/m"] = st.m
        arrays[f"optimizer/{name}/v"] = st.v
    header = {
        "version": FORMAT_VERSION,
        "iteration": int(ckpt.iteration),
        "omega": float(p.curve.omega),
        "joint_names": list(p.embeddings.names),
        "optimizer_steps": {k: int(v.step) for k, v in sorted(ckpt.optimizer.items())},
        "config": ckpt.config,
    }
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w", compression=zipfile.ZIP_STORED) as zf:
        entries = {"header.json": json.dumps(header, sort_keys=True, indent=1).encode()}
        entries.update({f"{k}.npy": _npy_bytes(v) for k, v in arrays.items()})
        for name in sorted(entries):
            info = zipfile.ZipInfo(name, date_time=_EPOCH)
            info.external_attr = 0o644 << 16
            zf.writestr(info, entries[name])
    return buf.getvalue()


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = checkpoint_bytes(ckpt)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path) -> Checkpoint:
    try:
        with zipfile.ZipFile(path) as zf:
            header = json.loads(zf.read("header.json"))
            arrays = {n[:-4]: np.load(io.BytesIO(zf.read(n)), allow_pickle=False)
                      for n in zf.namelist() if n.endswith(".npy")}
    except (OSError, KeyError, zipfile.BadZipFile, ValueError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if header.get("version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {header.get('version')}")
    try:
        gaussians = GaussianSet(**{k: arrays[f"gaussians/{k}"] for k in _GAUSSIAN_FIELDS})
        curve = BezierResidual(arrays["curve/control_points"], header["omega"])
        emb = JointEmbeddings(tuple(header["joint_names"]), arrays["embeddings/values"])
        optimizer = {name: AdamState(arrays[f"optimizer/{name}/m"], arrays[f"optimizer/{name}/v"], step)
                     for name, step in header["optimizer_steps"].items()}
    except KeyError as exc:
        raise CheckpointError(f"checkpoint {path} lacks entry {exc}") from exc
    return Checkpoint(ArmParams(gaussians, curve, emb), header["iteration"], header["config"], optimizer)
