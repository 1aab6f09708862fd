"""Held-out evaluation: render split frames at their logged joint values and score them."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .dataset import ScenePackage
from .metrics import psnr, ssim
from .pipeline import ArmParams, ArmRig, render_frame

TASKS = ("novel_pose", "novel_view")
SPLITS = ("train", "val", "test")


@dataclass
class EvalReport:
    split: str
    task: str
    frames: list[int]
    psnr: list[float]
    ssim: list[float]

    @property
    def mean_psnr(self) -> float:
        return float(np.mean(self.psnr))

    @property
    def mean_ssim(self) -> float:
        return float(np.mean(self.ssim))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["frame", "psnr", "ssim"])
        for f, p, s in zip(self.frames, self.psnr, self.ssim):
            w.writerow([f, repr(p), repr(s)])
        w.writerow(["mean", repr(self.mean_psnr), repr(self.mean_ssim)])
        return buf.getvalue()

    def table(self) -> str:
        lines = [f"{self.task} on {self.split} ({len(self.frames)} frames)",
                 f"{'frame':>7}  {'PSNR':>8}  {'SSIM':>7}"]
        lines += [f"{f:>7}  {p:8.3f}  {s:7.4f}" for f, p, s in zip(self.frames, self.psnr, self.ssim)]
        lines.append(f"{'mean':>7}  {self.mean_psnr:8.3f}  {self.mean_ssim:7.4f}")
        return "\n".join(lines)


def evaluate(params: ArmParams, scene: ScenePackage, split: str = "test", task: str = "novel_pose",
             rig: ArmRig | None = None) -> EvalReport:
    """Mean PSNR/SSIM over the frames of ``split``.

    Packages hold one shared camera, so both tasks render the held-out frames
    from that camera; they differ only in the label.
    """
    if split not in SPLITS:
        raise ValueError(f"split must be one of {SPLITS}")
    if task not in TASKS:
        raise ValueError(f"task must be one of {TASKS}")
    frames = list(scene.split.get(split, []))
    if not frames:
        raise ValueError(f"split {split!r} is empty")
    rig = rig or ArmRig.from_meshes(scene.model, scene.meshes)
    configs = scene.joint_configs()
    times = scene.normalized_times()
    ps, ss = [], []
    for i in frames:
        img = render_frame(rig, params, configs[i], float(times[i]), scene.camera, scene.background)
        ps.append(psnr(img.pixels, scene.frames[i]))
        ss.append(ssim(img.pixels, scene.frames[i]))
    return EvalReport(split, task, frames, ps, ss)
