"""Joint fitting of bound Gaussians and the motion refiner on one scene."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.ndimage import binary_dilation

from .binding import (DensifyConfig, densify, initialize_gaussians, prune, renormalize_quaternions,
                      reset_opacity)
from .checkpoint import Checkpoint, save_checkpoint
from .dataset import ScenePackage
from .losses import LossWeights, loss_pos, loss_rgb, loss_scale, loss_velocity, total_loss
from .metrics import target_moments
from .optim import Adam
from .pipeline import ArmParams, ArmRig, backward_frame, render_frame
from .refiner import BezierResidual, JointEmbeddings

logger = logging.getLogger(__name__)

REFERENCE_ITERATIONS = 600_000
BMR_MODES = ("full", "off", "curve-only", "embed-only")
GAUSSIAN_GROUPS = ("mu", "quat", "log_scale", "opacity_logit", "sh")
LOG_COLUMNS = ("iteration", "L_rgb", "L_pos", "L_scale", "L_vel", "total", "gaussian_count")


class TrainingError(RuntimeError):
    """Training diverged; a diagnostic dump was written when an output directory was given."""


@dataclass(frozen=True)
class Schedule:
    """Iteration plan; iterations are counted from 1."""

    total_iterations: int
    densify_interval: int = 100
    densify_start: int = 500
    densify_end: int = 60_000
    opacity_reset_interval: int = 3000

    def __post_init__(self):
        if self.total_iterations < 0:
            raise ValueError("total_iterations must be nonnegative")
        if min(self.densify_interval, self.opacity_reset_interval) < 1:
            raise ValueError("intervals must be at least 1")
        if self.total_iterations and not self.densify_start < self.densify_end <= self.total_iterations:
            raise ValueError("need densify_start < densify_end <= total_iterations")

    @classmethod
    def scaled(cls, total_iterations: int, reference: int = REFERENCE_ITERATIONS, **base) -> "Schedule":
        """Shrink the reference schedule proportionally for short runs (each value at least 1)."""
        ref = cls(reference, **base)
        if total_iterations == 0:
            return cls(0, ref.densify_interval, ref.densify_start, ref.densify_end, ref.opacity_reset_interval)
        f = min(total_iterations / reference, 1.0)

        def s(v):
            return max(1, int(round(v * f)))

        end = min(s(ref.densify_end), total_iterations)
        start = min(s(ref.densify_start), end - 1)
        return cls(total_iterations, s(ref.densify_interval), start, end, s(ref.opacity_reset_interval))

    def in_window(self, it: int) -> bool:
        return self.densify_start <= it <= self.densify_end

    def densify_at(self, it: int) -> bool:
        return self.in_window(it) and it % self.densify_interval == 0

    def reset_at(self, it: int) -> bool:
        return self.in_window(it) and it % self.opacity_reset_interval == 0


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 3000
    seed: int = 0
    sh_degree: int = 0
    omega: float = 0.1
    degree: int = 19
    bmr: str = "full"
    initial_gaussians: int = 1500
    initial_scale: float = 0.3  # face-scale units
    weights: LossWeights = field(default_factory=LossWeights)
    # learning rates; the position rate is in world units per scene extent
    lr_position: float = 1.6e-4
    lr_position_final: float = 0.01  # fraction of the initial rate reached at the end
    lr_color: float = 2.5e-3
    lr_opacity: float = 5e-2
    lr_scale: float = 5e-3
    lr_rotation: float = 1e-3
    lr_bmr: float = 1.5e-3
    bmr_weight_decay: float = 1e-4
    # density control
    densify_interval: int = 100
    densify_start: int = 500
    densify_end: int = 60_000
    opacity_reset_interval: int = 3000
    reference_iterations: int = REFERENCE_ITERATIONS
    grad_threshold: float = 2e-4
    split_fraction: float = 0.01  # of the scene extent
    prune_opacity: float = 0.005
    reset_ceiling: float = 0.01
    max_gaussians: int | None = 2000
    mask_dilation: int = 2
    checkpoint_interval: int = 0

    def __post_init__(self):
        if self.bmr not in BMR_MODES:
            raise ValueError(f"bmr must be one of {BMR_MODES}")
        if self.iterations < 0:
            raise ValueError("iterations must be nonnegative")

    @property
    def schedule(self) -> Schedule:
        return Schedule.scaled(self.iterations, self.reference_iterations,
                               densify_interval=self.densify_interval, densify_start=self.densify_start,
                               densify_end=self.densify_end, opacity_reset_interval=self.opacity_reset_interval)

    @property
    def learns_curve(self) -> bool:
        return self.bmr in ("full", "curve-only")

    @property
    def learns_embeddings(self) -> bool:
        return self.bmr in ("full", "embed-only")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["weights"] = asdict(self.weights)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        d = {k: v for k, v in d.items() if k in known}
        if isinstance(d.get("weights"), dict):
            d["weights"] = LossWeights(**d["weights"])
        return cls(**d)


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    log: list[dict]


def supervision_targets(scene: ScenePackage, dilation: int) -> list[np.ndarray]:
    """Frames with everything outside the dilated foreground mask set to the background color."""
    if scene.masks is None:
        return [f for f in scene.frames]
    out = []
    for frame, mask in zip(scene.frames, scene.masks):
        grown = binary_dilation(mask, iterations=dilation) if dilation > 0 else mask
        out.append(np.where(grown[..., None], frame, scene.background))
    return out


def initial_params(rig: ArmRig, config: TrainConfig) -> ArmParams:
    gaussians = initialize_gaussians(rig.binding, max(config.initial_gaussians, rig.binding.num_faces),
                                     config.seed, config.sh_degree, config.initial_scale)
    return ArmParams(gaussians, BezierResidual.zeros(config.degree, config.omega), JointEmbeddings.zeros(rig.model))


def mean_face_scale(rig: ArmRig) -> float:
    from .binding import face_frames

    return float(np.mean(face_frames(*rig.binding.triangles(rig.rest_vertices())).scale))


def _position_lr(config: TrainConfig, base: float, it: int) -> float:
    """Log-linear decay from ``base`` to ``base * lr_position_final`` over the run."""
    if config.iterations <= 1:
        return base
    r = min(max((it - 1) / (config.iterations - 1), 0.0), 1.0)
    return math.exp((1 - r) * math.log(base) + r * math.log(base * config.lr_position_final))


def _param_norms(params: ArmParams) -> dict[str, float]:
    g = params.gaussians
    norms = {k: float(np.linalg.norm(v)) for k, v in g.arrays().items() if k != "face"}
    norms["control_points"] = float(np.linalg.norm(params.curve.control_points))
    norms["embeddings"] = float(np.linalg.norm(params.embeddings.values))
    return norms


def _write_log(path: Path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(LOG_COLUMNS)
        for row in rows:
            writer.writerow([row[c] if c in ("iteration", "gaussian_count") else repr(float(row[c]))
                             for c in LOG_COLUMNS])


def train(scene: ScenePackage, config: TrainConfig = TrainConfig(), out_dir=None,
          callback: Callable[[int, ArmParams], None] | None = None) -> TrainResult:
    """Fit ``scene``'s training split; writes ``final.ckpt`` and ``loss.csv`` into ``out_dir`` if given."""
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    rig = ArmRig.from_meshes(scene.model, scene.meshes)
    extent = rig.scene_extent()
    params = initial_params(rig, config)
    schedule = config.schedule
    rng = np.random.default_rng(config.seed)

    train_idx = np.array(scene.split["train"], dtype=np.int64)
    if train_idx.size == 0:
        raise ValueError("scene has no training frames")
    configs = scene.joint_configs()
    times = scene.normalized_times()
    targets = supervision_targets(scene, config.mask_dilation)
    moments = {int(i): target_moments(targets[i]) for i in train_idx}
    h = 1.0 / (2.0 * max(scene.frame_count - 1, 1))

    lr_mu = config.lr_position * extent / mean_face_scale(rig)
    opt = Adam(
        lrs={"mu": lr_mu, "quat": config.lr_rotation, "log_scale": config.lr_scale,
             "opacity_logit": config.lr_opacity, "sh": config.lr_color,
             "curve": config.lr_bmr, "embeddings": config.lr_bmr},
        weight_decay={"curve": config.bmr_weight_decay, "embeddings": config.bmr_weight_decay},
    )
    densify_cfg = DensifyConfig(grad_threshold=config.grad_threshold, split_threshold=config.split_fraction * extent,
                                max_gaussians=config.max_gaussians)
    grad_accum = np.zeros(len(params.gaussians))
    seen = np.zeros(len(params.gaussians))
    weights = config.weights
    log: list[dict] = []
    order: list[int] = []

    def snapshot(it: int) -> Checkpoint:
        return Checkpoint(params.copy(), it, config.to_dict(),
                          {k: type(v)(v.m.copy(), v.v.copy(), v.step) for k, v in opt.states.items()})

    for it in range(1, config.iterations + 1):
        if not order:
            order = list(rng.permutation(train_idx))
        frame = int(order.pop(0))
        t = float(times[frame])
        g = params.gaussians

        image, cache = render_frame(rig, params, configs[frame], t, scene.camera, scene.background,
                                    return_cache=True)
        l_rgb, g_img = loss_rgb(image, targets[frame], None, weights.ssim_mix, moments[frame])
        l_pos, g_pos = loss_pos(g.mu, weights.pos_threshold)
        l_scale, g_scale = loss_scale(g.log_scale, weights.scale_threshold)
        if config.learns_curve:
            l_vel, g_vel = loss_velocity(params.curve, [t], h)
        else:
            l_vel, g_vel = 0.0, np.zeros_like(params.curve.control_points)
        total = total_loss((l_rgb, l_pos, l_scale, l_vel), weights)
        if not math.isfinite(total):
            diag = {"iteration": it, "frame": frame, "t": t, "losses": [l_rgb, l_pos, l_scale, l_vel],
                    "gaussian_count": len(g), "parameter_norms": _param_norms(params)}
            if out is not None:
                (out / "diagnostic.json").write_text(json.dumps(diag, indent=2, default=float) + "\n")
            raise TrainingError(f"non-finite loss at iteration {it} (frame {frame})")

        grads = backward_frame(rig, params, cache, g_img, need_motion=config.bmr != "off")
        local = grads.local
        step_grads = {
            "mu": local.mu + weights.pos * g_pos,
            "quat": local.quat,
            "log_scale": local.log_scale + weights.scale * g_scale,
            "opacity_logit": local.opacity_logit,
            "sh": local.sh,
        }
        if config.learns_curve:
            step_grads["curve"] = grads.control_points + weights.vel * g_vel
        if config.learns_embeddings:
            step_grads["embeddings"] = grads.embeddings

        opt.lrs["mu"] = _position_lr(config, lr_mu, it)
        current = {**g.arrays(), "curve": params.curve.control_points, "embeddings": params.embeddings.values}
        updated = opt.step(current, step_grads)
        for name in GAUSSIAN_GROUPS:
            setattr(g, name, updated[name])
        if "curve" in updated:
            params.curve.control_points = updated["curve"]
        if "embeddings" in updated:
            params.embeddings.values = updated["embeddings"]
        renormalize_quaternions(g)

        active = cache.render.active
        grad_accum[active] += grads.render.viewspace_norm[active]
        seen[active] += 1

        if schedule.densify_at(it):
            stats = np.where(seen > 0, grad_accum / np.maximum(seen, 1), 0.0)
            frames_now = cache.frames
            world_max = np.asarray(frames_now.scale)[g.face] * np.exp(g.log_scale.max(axis=1))
            g, source = densify(g, stats, world_max, densify_cfg, rng)
            opt.remap_rows(GAUSSIAN_GROUPS, source)
            g, kept = prune(g, config.prune_opacity)
            opt.remap_rows(GAUSSIAN_GROUPS, kept)
            params.gaussians = g
            grad_accum = np.zeros(len(g))
            seen = np.zeros(len(g))
        if schedule.reset_at(it):
            params.gaussians = reset_opacity(params.gaussians, config.reset_ceiling)
            state = opt.states.get("opacity_logit")
            if state is not None:
                state.m[:] = 0.0
                state.v[:] = 0.0

        row = {"iteration": it, "L_rgb": l_rgb, "L_pos": l_pos, "L_scale": l_scale, "L_vel": l_vel,
               "total": total, "gaussian_count": len(params.gaussians)}
        log.append(row)
        if it % 500 == 0:
            logger.info("iter %d  total %.5f  rgb %.5f  gaussians %d", it, total, l_rgb, len(params.gaussians))
        if out is not None and config.checkpoint_interval and it % config.checkpoint_interval == 0:
            save_checkpoint(snapshot(it), out / f"iter_{it:06d}.ckpt")
        if callback is not None:
            callback(it, params)

    ckpt = snapshot(config.iterations)
    if out is not None:
        save_checkpoint(ckpt, out / "final.ckpt")
        _write_log(out / "loss.csv", log)
    return TrainResult(ckpt, log)
