"""``armsplat`` command line: fit, render, eval, synth, inspect.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

logger = logging.getLogger("armsplat")

THREADS_ENV = "ARMSPLAT_THREADS"


class UsageError(Exception):
    """Bad command-line input detected after argument parsing."""


def _set_threads(n: int | None) -> None:
    import numba

    if n is None:
        env = os.environ.get(THREADS_ENV)
        n = int(env) if env else None
    if n is not None:
        if n < 1:
            raise UsageError("--threads must be at least 1")
        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


def _existing_dir(path: str) -> Path:
    p = Path(path)
    if not p.is_dir():
        raise UsageError(f"scene directory {path!r} does not exist")
    return p


def _existing_file(path: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"file {path!r} does not exist")
    return p


# -- fit ----------------------------------------------------------------------

def _add_fit(sub):
    p = sub.add_parser("fit", help="fit a scene package")
    p.add_argument("scene")
    p.add_argument("-o", "--output", required=True, help="output directory")
    p.add_argument("--iterations", type=int, default=3000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sh-degree", type=int, default=0, choices=range(4))
    p.add_argument("--omega", type=float, default=0.1)
    p.add_argument("--degree", type=int, default=19, help="Bézier degree K")
    p.add_argument("--bmr", choices=("full", "off", "curve-only", "embed-only"), default="full")
    p.add_argument("--initial-gaussians", type=int, default=1500)
    p.add_argument("--max-gaussians", type=int, default=2000, help="cap on the Gaussian count during densification")
    p.add_argument("--ssim-mix", type=float, default=0.2)
    p.add_argument("--lambda-pos", type=float, default=0.01)
    p.add_argument("--lambda-scale", type=float, default=1.0)
    p.add_argument("--lambda-vel", type=float, default=0.001)
    p.add_argument("--densify-interval", type=int, default=100)
    p.add_argument("--densify-start", type=int, default=500)
    p.add_argument("--densify-end", type=int, default=60_000)
    p.add_argument("--opacity-reset-interval", type=int, default=3000)
    p.add_argument("--reference-iterations", type=int, default=600_000,
                   help="run length the schedule values refer to; shorter runs scale them down")
    p.add_argument("--checkpoint-interval", type=int, default=0)
    p.add_argument("--deterministic", action="store_true")
    p.add_argument("--threads", type=int)
    p.set_defaults(func=cmd_fit)


def fit_config(args):
    from .losses import LossWeights
    from .train import TrainConfig

    weights = LossWeights(ssim_mix=args.ssim_mix, pos=args.lambda_pos, scale=args.lambda_scale, vel=args.lambda_vel)
    return TrainConfig(
        iterations=args.iterations, seed=args.seed, sh_degree=args.sh_degree, omega=args.omega,
        degree=args.degree, bmr=args.bmr, initial_gaussians=args.initial_gaussians,
        max_gaussians=args.max_gaussians, weights=weights, densify_interval=args.densify_interval,
        densify_start=args.densify_start, densify_end=args.densify_end,
        opacity_reset_interval=args.opacity_reset_interval, reference_iterations=args.reference_iterations,
        checkpoint_interval=args.checkpoint_interval,
    )


def cmd_fit(args) -> int:
    from .dataset import load_scene
    from .train import train

    scene_dir = _existing_dir(args.scene)
    if args.deterministic and args.threads is None:
        args.threads = 1
    _set_threads(args.threads)
    try:
        config = fit_config(args)
        config.schedule  # noqa: B018 - validates the density-control window
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    scene = load_scene(scene_dir)
    result = train(scene, config, args.output)
    last = result.log[-1] if result.log else None
    msg = f"wrote {Path(args.output) / 'final.ckpt'}"
    if last:
        msg += f" (final loss {last['total']:.5f}, {last['gaussian_count']} Gaussians)"
    print(msg)
    return 0


# -- render -------------------------------------------------------------------

def _parse_angles(text: str) -> dict[str, float]:
    out = {}
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        name, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"malformed angle {item!r}; expected name=value")
        try:
            out[name.strip()] = float(value)
        except ValueError:
            raise UsageError(f"malformed angle value in {item!r}") from None
    if not out:
        raise UsageError("no joint angles given")
    return out


def _add_render(sub):
    p = sub.add_parser("render", help="render a checkpoint at given joint angles")
    p.add_argument("checkpoint")
    p.add_argument("--scene", required=True, help="scene package providing URDF, meshes and camera")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--angles", help="comma separated name=value list (radians or meters)")
    src.add_argument("--trajectory", help="CSV with timestamp,name,value rows; one image per timestamp")
    src.add_argument("--frames", help="comma separated frame indices of the scene")
    p.add_argument("--time", type=float, default=0.0, help="normalized time for --angles")
    p.add_argument("--camera", help="camera JSON overriding the scene camera")
    p.add_argument("-o", "--output", required=True, help="output directory")
    p.add_argument("--threads", type=int)
    p.add_argument("--deterministic", action="store_true")
    p.set_defaults(func=cmd_render)


def cmd_render(args) -> int:
    import json

    from .checkpoint import load_checkpoint
    from .dataset import JointTrajectory, SceneError, load_scene, synchronize_joints
    from .images import save_float_image, save_png
    from .pipeline import ArmRig, render_frame
    from .renderer import Camera
    from .urdf import clamp_configuration

    _existing_file(args.checkpoint)
    scene_dir = _existing_dir(args.scene)
    if args.deterministic and args.threads is None:
        args.threads = 1
    _set_threads(args.threads)
    if args.angles is not None:
        angles = _parse_angles(args.angles)
    scene = load_scene(scene_dir)
    ckpt = load_checkpoint(args.checkpoint)
    rig = ArmRig.from_meshes(scene.model, scene.meshes)
    cam = Camera.from_dict(json.loads(Path(args.camera).read_text())) if args.camera else scene.camera

    poses: list[tuple[dict[str, float], float]] = []
    if args.angles is not None:
        if not 0.0 <= args.time <= 1.0:
            raise UsageError("--time must lie in [0, 1]")
        missing = [j for j in rig.joint_names if j not in angles]
        if missing:
            raise UsageError(f"--angles lacks values for {missing}")
        poses.append((angles, args.time))
    elif args.trajectory is not None:
        try:
            traj = JointTrajectory.from_csv(_existing_file(args.trajectory).read_text())
        except SceneError as exc:
            raise UsageError(f"malformed trajectory file: {exc}") from exc
        ft = scene.frame_times
        span = ft[-1] - ft[0] if len(ft) > 1 else 1.0
        configs = synchronize_joints(traj, traj.timestamps)
        for ts, cfg in zip(traj.timestamps, configs):
            poses.append((cfg, float(np.clip((ts - ft[0]) / span, 0.0, 1.0))))
    else:
        try:
            idx = [int(v) for v in args.frames.split(",") if v.strip()]
        except ValueError:
            raise UsageError("--frames expects comma separated integers") from None
        if not idx or any(not 0 <= i < scene.frame_count for i in idx):
            raise UsageError("frame index out of range")
        configs, times = scene.joint_configs(), scene.normalized_times()
        poses = [(configs[i], float(times[i])) for i in idx]

    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    for n, (cfg, t) in enumerate(poses):
        img = render_frame(rig, ckpt.params, clamp_configuration(rig.model, cfg), t, cam, scene.background)
        save_png(out / f"render_{n:06d}.png", img.pixels)
        save_float_image(out / f"render_{n:06d}.f32", img.pixels)
    print(f"rendered {len(poses)} image(s) into {out}")
    return 0


# -- eval ---------------------------------------------------------------------

def _add_eval(sub):
    p = sub.add_parser("eval", help="score a checkpoint on held-out frames")
    p.add_argument("checkpoint")
    p.add_argument("scene")
    p.add_argument("--split", choices=("val", "test", "train"), default="test")
    p.add_argument("--task", choices=("novel_pose", "novel_view"), default="novel_pose")
    p.add_argument("--csv", help="write per-frame metrics here")
    p.add_argument("--threads", type=int)
    p.add_argument("--deterministic", action="store_true")
    p.set_defaults(func=cmd_eval)


def cmd_eval(args) -> int:
    from .checkpoint import load_checkpoint
    from .dataset import load_scene
    from .evaluate import evaluate

    _existing_file(args.checkpoint)
    scene_dir = _existing_dir(args.scene)
    if args.deterministic and args.threads is None:
        args.threads = 1
    _set_threads(args.threads)
    report = evaluate(load_checkpoint(args.checkpoint).params, load_scene(scene_dir), args.split, args.task)
    if args.csv:
        Path(args.csv).write_text(report.to_csv())
    print(report.table())
    return 0


# -- synth --------------------------------------------------------------------

def _add_synth(sub):
    from .synthetic import SynthSpec

    d = SynthSpec()
    p = sub.add_parser("synth", help="generate a synthetic scene package")
    p.add_argument("output")
    p.add_argument("--seed", type=int, default=d.seed)
    p.add_argument("--joints", type=int, choices=(2, 3), default=d.joints)
    p.add_argument("--frames", type=int, default=d.frames)
    p.add_argument("--width", type=int, default=d.width)
    p.add_argument("--height", type=int, default=d.height)
    p.add_argument("--gaussians", type=int, default=d.gaussians)
    p.add_argument("--offset-joint", type=int, default=d.offset_joint)
    p.add_argument("--offset-deg", type=float, default=d.offset_deg)
    p.add_argument("--wobble", type=float, default=d.wobble, help="translation wobble amplitude in meters")
    p.add_argument("--wobble-cycles", type=float, default=d.wobble_cycles)
    p.add_argument("--threads", type=int)
    p.add_argument("--deterministic", action="store_true")
    p.set_defaults(func=cmd_synth)


def cmd_synth(args) -> int:
    from .checkpoint import save_checkpoint
    from .dataset import save_scene
    from .synthetic import SynthSpec, generate_synthetic_scene

    if args.deterministic and args.threads is None:
        args.threads = 1
    _set_threads(args.threads)
    try:
        spec = SynthSpec(joints=args.joints, frames=args.frames, width=args.width, height=args.height,
                         gaussians=args.gaussians, seed=args.seed, offset_joint=args.offset_joint,
                         offset_deg=args.offset_deg, wobble=args.wobble, wobble_cycles=args.wobble_cycles)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    synth = generate_synthetic_scene(spec)
    out = Path(args.output)
    save_scene(synth.scene, out)
    save_checkpoint(synth.truth, out / "ground_truth.ckpt")
    print(f"wrote {synth.scene.frame_count} frames to {out}")
    return 0


# -- inspect ------------------------------------------------------------------

def _add_inspect(sub):
    p = sub.add_parser("inspect", help="validate and summarize a scene package")
    p.add_argument("path")
    p.set_defaults(func=cmd_inspect)


def cmd_inspect(args) -> int:
    from .dataset import read_scene

    scene, problems = read_scene(args.path)
    if problems:
        print(f"{args.path}: {len(problems)} problem(s)")
        for p in problems:
            print(f"  - {p}")
        return 1
    model = scene.model
    print(f"scene        {scene.name}")
    print(f"frames       {scene.frame_count} at {scene.width}x{scene.height}")
    print(f"masks        {'yes' if scene.masks is not None else 'no'}")
    print(f"joint log    {len(scene.trajectory)} records, joints {', '.join(scene.trajectory.names)}")
    print(f"links        {', '.join(model.link_names)}")
    print(f"mesh faces   {sum(len(m.faces) for m in scene.meshes.values())}")
    print(f"split        train {len(scene.split['train'])}, val {len(scene.split['val'])}, "
          f"test {len(scene.split['test'])}")
    return 0


# -- entry point ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="armsplat", description="Mesh-bound Gaussian splatting for robot arms.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for add in (_add_fit, _add_render, _add_eval, _add_synth, _add_inspect):
        add(sub)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"armsplat: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - reported as a runtime failure
        logger.debug("command failed", exc_info=True)
        print(f"armsplat: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
