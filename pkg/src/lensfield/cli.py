"""Command-line entry point: ``lensfield {synth,train,render,eval,verify}``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import ptraining, scene as scenemod, verify
from .field import DESK_ARCH, FULL_ARCH, CheckpointFormatError, FieldParams, load_checkpoint
from .imageio import read_image, write_image
from .render import Camera, render_image

log = logging.getLogger("lensfield")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _ints(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def cmd_synth(args) -> int:
    sc = scenemod.PRESETS[args.scene]()
    m = scenemod.generate_dataset(sc, args.views, args.size, args.seed, args.out, supersample=args.supersample)
    print(f"wrote {len(m.frames)} views to {m.root}")
    return EXIT_OK


def cmd_train(args) -> int:
    manifest = scenemod.DatasetManifest.load(args.data)
    cameras = manifest.cameras()
    images = np.stack([read_image(p) for p in manifest.image_paths()])

    base = ptraining.FULL if args.scale == "paper" else ptraining.DESK
    overrides = {
        "total_steps": args.steps, "batch_size": args.batch, "seed": args.seed,
        "coarse_weight": args.coarse_weight, "n_coarse": args.n_coarse, "n_fine": args.n_fine,
        "kernel_sizes": args.kernel_sizes, "kernel_probs": args.kernel_probs, "eval_every": args.eval_every,
    }
    cfg = ptraining.TrainConfig(**{**base.__dict__, **{k: v for k, v in overrides.items() if v is not None}})
    if len(cfg.kernel_sizes) != len(cfg.kernel_probs):
        raise UsageError("--kernel-sizes and --kernel-probs must have the same length")

    bank = ptraining.build_blur_bank(images, cfg.kernel_sizes, cfg.kernel_probs)
    data = ptraining.TrainingData.build(cameras, bank)
    arch = FULL_ARCH if args.scale == "paper" else DESK_ARCH
    params = FieldParams.init(arch, seed=cfg.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    meta = {"dataset": str(manifest.root.resolve()), "camera": _camera_meta(manifest)}
    ptraining.write_train_manifest(out / "train_manifest.txt", cfg, str(manifest.root), {"arch": args.scale})
    result = ptraining.train(params, data, cfg, out, meta)
    last = result.history[-1][-1] if result.history else float("nan")
    print(f"trained {cfg.total_steps} steps in {result.seconds:.1f}s, last batch psnr {last:.2f} dB -> {out / 'field.ckpt'}")
    return EXIT_OK


def _camera_meta(m: scenemod.DatasetManifest) -> dict:
    return {
        "width": m.width, "height": m.height, "focal_px": m.focal_px, "near": m.near, "far": m.far,
        "focal_length": m.focal_length, "focus_distance": m.focus_distance,
        "poses": [[*fr["rotation"], *fr["translation"]] for fr in m.frames],
    }


def _render_camera(args, header: dict) -> Camera:
    cm = header.get("meta", {}).get("camera")
    if cm is None:
        raise UsageError("checkpoint carries no camera metadata")
    size = args.size or cm["width"]
    focal_px = cm["focal_px"] * size / cm["width"]
    if args.pose_matrix is not None:
        vals = args.pose_matrix
        R, t = np.reshape(vals[:9], (3, 3)), np.asarray(vals[9:])
    elif args.view is not None:
        if not 0 <= args.view < len(cm["poses"]):
            raise UsageError(f"--view must be in [0, {len(cm['poses'])})")
        pose = cm["poses"][args.view]
        R, t = np.reshape(pose[:9], (3, 3)), np.asarray(pose[9:])
    else:
        front = scenemod.rig_camera(size)
        R, t = front.rotation, front.translation
    return Camera.create(R, t, size, size, focal_px, cm["near"], cm["far"],
                         focal_length=cm["focal_length"], focus_distance=cm["focus_distance"])


def cmd_render(args) -> int:
    params, header = load_checkpoint(args.checkpoint)
    cam = _render_camera(args, header)
    if args.aperture < 0:
        raise UsageError("--aperture must be >= 0")
    focus = args.focus if args.focus is not None else cam.lens.focus_distance
    if focus <= 0:
        raise UsageError("--focus must be > 0")
    img = render_image(cam, params, aperture=args.aperture, focus=focus, scale=args.kernel_scale,
                       n_coarse=args.n_coarse, n_fine=args.n_fine)
    write_image(args.out, img)
    print(f"wrote {args.out} ({cam.width}x{cam.height}, A={args.aperture:g}, focus={focus:g})")
    return EXIT_OK


def cmd_eval(args) -> int:
    img = read_image(args.image)
    ref = read_image(args.reference)
    if img.shape != ref.shape:
        raise UsageError(f"shape mismatch {img.shape} vs {ref.shape}")
    if args.blur > 1:
        ref = ptraining.blur_image(ref, args.blur)
    mse = float(np.mean((img - ref) ** 2))
    print(f"psnr {ptraining.psnr(mse):.3f} dB  mse {mse:.6g}")
    return EXIT_OK


def cmd_verify(args) -> int:
    checks = verify.run(args.suite, args.tolerance_scale)
    for c in checks:
        print(c.line())
    failed = sum(not c.passed for c in checks)
    print(f"{len(checks) - failed}/{len(checks)} checks passed")
    return EXIT_OK if failed == 0 else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lensfield", description="Thin-lens radiance fields with multi-blur training.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="render a synthetic posed dataset")
    s.add_argument("--scene", choices=sorted(scenemod.PRESETS), default="two-planes")
    s.add_argument("--views", type=int, default=25)
    s.add_argument("--size", type=int, default=64)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--supersample", type=int, default=4)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="fit a field with multi-blur training")
    t.add_argument("--data", required=True, help="dataset directory (with manifest.json)")
    t.add_argument("--out", required=True)
    t.add_argument("--scale", choices=("desk", "paper"), default="desk")
    t.add_argument("--steps", type=int)
    t.add_argument("--batch", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--coarse-weight", type=float)
    t.add_argument("--n-coarse", type=int)
    t.add_argument("--n-fine", type=int)
    t.add_argument("--kernel-sizes", type=_ints)
    t.add_argument("--kernel-probs", type=_floats)
    t.add_argument("--eval-every", type=int)
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("render", help="render a view with a virtual lens")
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--out", required=True, help=".png or .ppm")
    r.add_argument("--aperture", type=float, default=0.0)
    r.add_argument("--focus", type=float)
    r.add_argument("--size", type=int)
    pose = r.add_mutually_exclusive_group()
    pose.add_argument("--view", type=int, help="index of a training pose")
    pose.add_argument("--pose-matrix", type=_floats, help="9 row-major rotation values then 3 translation values")
    r.add_argument("--kernel-scale", type=float, default=1.0)
    r.add_argument("--n-coarse", type=int, default=64)
    r.add_argument("--n-fine", type=int, default=64)
    r.set_defaults(func=cmd_render)

    e = sub.add_parser("eval", help="PSNR of an image against a reference")
    e.add_argument("--image", required=True)
    e.add_argument("--reference", required=True)
    e.add_argument("--blur", type=int, default=1, help="blur the reference with this kernel size first")
    e.set_defaults(func=cmd_eval)

    v = sub.add_parser("verify", help="run the numerical oracle suites")
    v.add_argument("--suite", action="append", choices=sorted(verify.SUITES))
    v.add_argument("--tolerance-scale", type=float, default=1.0, help=argparse.SUPPRESS)
    v.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(asctime)s %(message)s")
    if args.command == "render" and args.pose_matrix is not None and len(args.pose_matrix) != 12:
        parser.print_usage(sys.stderr)
        print("error: --pose-matrix needs 12 values", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CheckpointFormatError, FileNotFoundError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
