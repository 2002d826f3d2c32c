"""Command-line entry point: ``sparsesplat <command> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from ..config import RunConfig
from ..gaussians import read_ply, write_ply
from ..imageio import read_png, write_pfm, write_png
from ..rasterizer import rasterize
from ..weights import WeightStore
from .fit import fit_scene
from .metrics import psnr, ssim
from .pipeline import init_weights, run_infer
from .scene import load_camera, load_scene
from .synth import PRESETS, write_synthetic

log = logging.getLogger("sparsesplat")


def _config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "threads", None) is not None:
        cfg.threads = args.threads
    return cfg


def cmd_infer(args) -> int:
    cfg = _config(args)
    scene = load_scene(args.scene)
    weights = WeightStore.load(args.weights) if args.weights else init_weights(cfg)
    result = run_infer(scene, cfg, weights)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_ply(result.gaussians, out / "gaussians.ply")
    for i, depth in zip(scene.context, result.depths):
        write_pfm(out / f"depth_{i}.pfm", depth)
    summary = {"gaussians": len(result.gaussians), "targets": {}}
    for t, render in result.renders.items():
        write_png(out / f"render_{t}.png", render.color)
        gt = scene.views[t].image
        summary["targets"][str(t)] = {"psnr": psnr(render.color, gt), "ssim": ssim(render.color, gt)}
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_fit(args) -> int:
    cfg = _config(args)
    if args.iters is not None:
        cfg.fit.iterations = args.iters
    if args.lr is not None:
        cfg.fit.lr = args.lr
    if args.init is not None:
        cfg.fit.init = args.init
    scene = load_scene(args.scene)
    weights = WeightStore.load(args.weights) if args.weights else None

    def progress(it, loss, best):
        if args.log_every and it % args.log_every == 0:
            log.info("iter %d loss %.6g best %.6g", it, loss, best)

    result = fit_scene(scene, cfg, weights, callback=progress)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_ply(result.gaussians, out / "fit.ply")
    for k, render in zip(scene.context, result.renders):
        write_png(out / f"fit_{k}.png", render)
    (out / "loss.json").write_text(json.dumps({"loss": result.losses, "best": result.best_trace}))
    summary = {"psnr": result.psnr, "best_iteration": result.best_iteration, "final_best_loss": result.best_trace[-1]}
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_render(args) -> int:
    g = read_ply(args.ply)
    cam = load_camera(args.camera)
    bg = tuple(args.background)
    out = rasterize(g, cam, cam.width, cam.height, bg, threads=args.threads)
    write_png(args.out, out.color)
    return 0


def cmd_gradcheck(args) -> int:
    from . import gradcheck

    reports = gradcheck.run(args.module, seed=args.seed)
    ok = True
    for name, rep in reports.items():
        status = "PASS" if rep.passed else "FAIL"
        ok &= rep.passed
        print(f"{status} {name}: rel err {rep.max_rel_error:.3e} (tol {rep.tol:g})")
    return 0 if ok else 1


def cmd_metrics(args) -> int:
    a = read_png(args.a)
    b = read_png(args.b)
    print(json.dumps({"psnr": psnr(a, b), "ssim": ssim(a, b)}, sort_keys=True))
    return 0


def cmd_synth(args) -> int:
    path = write_synthetic(args.preset, args.out, args.size, args.seed)
    print(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sparsesplat", description="Sparse-view Gaussian splatting toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("infer", help="feed-forward prediction and target rendering")
    s.add_argument("--scene", required=True)
    s.add_argument("--weights", help="TSWT weights; seeded initialisation when omitted")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--config")
    s.add_argument("--threads", type=int)
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("fit", help="per-scene optimisation against the context views")
    s.add_argument("--scene", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--iters", type=int)
    s.add_argument("--lr", type=float, help="multiplier on the per-group learning rates")
    s.add_argument("--init", choices=["random", "infer"])
    s.add_argument("--weights")
    s.add_argument("--seed", type=int)
    s.add_argument("--config")
    s.add_argument("--threads", type=int)
    s.add_argument("--log-every", type=int, default=0)
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("render", help="render a PLY from a camera JSON")
    s.add_argument("--ply", required=True)
    s.add_argument("--camera", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--background", type=float, nargs=3, default=(0.0, 0.0, 0.0))
    s.add_argument("--threads", type=int, default=1)
    s.set_defaults(func=cmd_render)

    s = sub.add_parser("gradcheck", help="analytic vs finite-difference gradients")
    s.add_argument("--module", choices=["rasterizer", "numerics", "all"], default="all")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("metrics", help="PSNR and SSIM between two PNGs")
    s.add_argument("--a", required=True)
    s.add_argument("--b", required=True)
    s.set_defaults(func=cmd_metrics)

    s = sub.add_parser("synth", help="write a synthetic scene")
    s.add_argument("--preset", choices=PRESETS, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--size", type=int, default=64)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_synth)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s",
                        stream=sys.stderr)
    try:
        return args.func(args)
    except (OSError, ValueError, KeyError) as exc:
        print(f"sparsesplat {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
