"""Command-line entry point: ``evinterp <command> [options]``.

Exit status is 0 on success, 2 for bad input and 3 for a numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from .align import align_streams
from .benchmark import benchmark_timing
from .errors import InputError, NumericalError
from .estimator import MODES, EstimatorConfig, estimate_spline_motion
from .events import SimulatorConfig, build_voxel_grid, simulate_events
from .formats import load_events, load_frames, save_events, save_frames
from .fusion import FusionConfig, gate_statistics, write_gate_csv
from .metrics import psnr, ssim
from .pipeline import (FUSIONS, METHODS, Dataset, InterpolationOptions, evaluate, first_gap_gates,
                       interpolate)
from .spline import save_spline
from .synthetic import occlusion_scene, parabola_scene, simulate_scene, slowed, translating_scene

log = logging.getLogger("evinterp")

SCENES = {
    "translating": lambda size, seed: translating_scene(size, seed=seed),
    "parabola": lambda size, seed: parabola_scene(size, seed=seed),
    "occlusion": lambda size, seed: occlusion_scene(size, seed=seed),
}


def _estimator_cfg(args) -> EstimatorConfig:
    overrides = {k: getattr(args, k, None) for k in ("mode", "contrast_threshold", "levels", "iterations")}
    if args.config:
        return EstimatorConfig.from_file(args.config, **overrides)
    return EstimatorConfig(**{k: v for k, v in overrides.items() if v is not None})


def _dataset(args) -> Dataset:
    frames = load_frames(args.frames)
    h, w = frames[0].shape
    events = load_events(args.events, w, h)
    return Dataset(frames, events, tuple(args.shift))


def _fmt(x: float) -> str:
    return "inf" if np.isinf(x) else f"{x:.4f}"


def cmd_simulate(args) -> int:
    cfg = SimulatorConfig(args.contrast_threshold, args.refractory_us)
    if args.input:
        dense = load_frames(args.input)
        events = simulate_events(dense, cfg)
        frames = dense[::args.stride]
    else:
        # The whole scene motion is spread over the requested number of frames.
        scene = slowed(SCENES[args.scene](args.size, args.seed), max(args.num_frames - 1, 1))
        frames, events = simulate_scene(scene, args.num_frames, args.span_us, args.substeps, cfg)
    save_frames(frames, args.out_frames)
    save_events(events, args.out_events)
    print(f"wrote {len(frames)} frames to {args.out_frames} and {len(events)} events to {args.out_events}")
    return 0


def cmd_voxelize(args) -> int:
    events = load_events(args.events, args.width, args.height)
    t_a = int(events.t[0]) if args.t0 is None else args.t0
    t_b = int(events.t[-1]) if args.t1 is None else args.t1
    grid = build_voxel_grid(events, t_a, t_b, args.bins)
    np.save(args.out, grid.data)
    print(f"voxel grid {grid.data.shape} over [{t_a}, {t_b}] -> {args.out}")
    return 0


def cmd_align(args) -> int:
    ds = _dataset(args)
    i = args.index
    if i + 1 >= len(ds.frames):
        raise InputError(f"frame pair {i} needs {i + 2} frames, have {len(ds.frames)}")
    dx, dy = align_streams(ds.events, ds.frames[i], ds.frames[i + 1], args.radius)
    print(f"{dx} {dy}")
    return 0


def cmd_estimate(args) -> int:
    ds = _dataset(args)
    i = args.index
    if i + 1 >= len(ds.frames):
        raise InputError(f"frame pair {i} needs {i + 2} frames, have {len(ds.frames)}")
    S = estimate_spline_motion(ds.frames[i], ds.frames[i + 1], ds.aligned_events(), args.K,
                               _estimator_cfg(args))
    save_spline(S, args.out)
    print(f"spline K={S.K} {S.width}x{S.height} -> {args.out}")
    return 0


def cmd_interpolate(args) -> int:
    ds = _dataset(args)
    if args.align is not None:
        shift = align_streams(ds.events, ds.frames[0], ds.frames[1], args.align)
        log.info("estimated event shift %s", shift)
        ds = Dataset(ds.frames, ds.events, shift)
    fcfg = FusionConfig(seed=args.seed, param_path=args.fusion_params)
    opts = InterpolationOptions(N=args.N or max(args.skip, 1), skip=args.skip, method=args.method,
                                fusion=args.fusion, K=args.K, estimator=_estimator_cfg(args),
                                fusion_cfg=fcfg, threads=args.threads)
    result = interpolate(ds, opts)
    frames = result.sequence() if args.with_keyframes else [f for gap in result.inserted for f in gap]
    save_frames(frames, args.out)
    print(f"wrote {len(frames)} frames to {args.out}")
    if args.gate_csv:
        if args.fusion != "gated":
            raise InputError("--gate-csv needs --fusion gated")
        write_gate_csv(gate_statistics(first_gap_gates(ds, opts)), args.gate_csv)
    if args.skip and opts.N == args.skip:
        scores = evaluate(result)
        mean = lambda key: float(np.mean([getattr(s, key) for s in scores]))  # noqa: E731
        print(f"PSNR {_fmt(mean('psnr'))} dB  SSIM {mean('ssim'):.4f}  "
              f"(keyframe average: PSNR {_fmt(mean('baseline_psnr'))} dB  SSIM {mean('baseline_ssim'):.4f})")
    return 0


def cmd_metrics(args) -> int:
    pred, gt = load_frames(args.pred), load_frames(args.gt)
    if len(pred) != len(gt):
        raise InputError(f"{len(pred)} predicted frames vs {len(gt)} reference frames")
    rows = [(a.t, psnr(a, b), ssim(a, b)) for a, b in zip(pred, gt)]
    print("t_us,psnr_db,ssim")
    for t, p, s in rows:
        print(f"{t},{_fmt(p)},{s:.6f}")
    finite = [p for _, p, _ in rows if np.isfinite(p)]
    summary = {"frames": len(rows), "mean_psnr": float(np.mean(finite)) if finite else float("inf"),
               "mean_ssim": float(np.mean([s for _, _, s in rows]))}
    if args.json:
        Path(args.json).write_text(json.dumps(summary, indent=2))
    return 0


def cmd_benchmark(args) -> int:
    ds = _dataset(args)
    opts = InterpolationOptions(K=args.K, estimator=_estimator_cfg(args),
                                fusion_cfg=FusionConfig(seed=args.seed))
    report = benchmark_timing(ds, args.N, args.methods, args.repeats, args.warmup, opts)
    if args.csv:
        report.write_csv(args.csv)
    print(report.table())
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="evinterp", description=__doc__.splitlines()[0])
    p.add_argument("--config", help="estimator settings file (key = value lines)")
    p.add_argument("--seed", type=int, default=0, help="seed for synthetic scenes and fusion weights")
    p.add_argument("--threads", type=int, default=1, help="keyframe gaps processed concurrently")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def data_args(sp):
        sp.add_argument("--frames", required=True, help="frame directory")
        sp.add_argument("--events", required=True, help="event file (.csv or EVS1 binary)")
        sp.add_argument("--shift", type=int, nargs=2, default=(0, 0), metavar=("DX", "DY"),
                        help="event offset relative to frames")

    def est_args(sp):
        sp.add_argument("--K", type=int, default=4, help="spline control points")
        sp.add_argument("--mode", choices=MODES, default=None)
        sp.add_argument("--contrast-threshold", type=float, default=None)
        sp.add_argument("--levels", type=int, default=None)
        sp.add_argument("--iterations", type=int, default=None)

    sp = sub.add_parser("simulate", help="render or ingest frames and simulate events")
    sp.add_argument("--scene", choices=sorted(SCENES), default="translating")
    sp.add_argument("--input", help="dense frame directory to convert instead of a synthetic scene")
    sp.add_argument("--stride", type=int, default=1, help="keep every n-th input frame")
    sp.add_argument("--size", type=int, default=64)
    sp.add_argument("--num-frames", type=int, default=9)
    sp.add_argument("--span-us", type=int, default=10_000)
    sp.add_argument("--substeps", type=int, default=32)
    sp.add_argument("--contrast-threshold", type=float, default=0.1)
    sp.add_argument("--refractory-us", type=int, default=0)
    sp.add_argument("--out-frames", required=True)
    sp.add_argument("--out-events", required=True)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("voxelize", help="accumulate events into a voxel grid (.npy)")
    sp.add_argument("--events", required=True)
    sp.add_argument("--width", type=int)
    sp.add_argument("--height", type=int)
    sp.add_argument("--t0", type=int)
    sp.add_argument("--t1", type=int)
    sp.add_argument("--bins", type=int, default=5)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_voxelize)

    sp = sub.add_parser("align", help="estimate the event-to-frame pixel offset")
    data_args(sp)
    sp.add_argument("--index", type=int, default=0, help="first frame of the pair to use")
    sp.add_argument("--radius", type=int, default=8)
    sp.set_defaults(func=cmd_align)

    sp = sub.add_parser("estimate", help="fit a motion spline for one keyframe pair")
    data_args(sp)
    est_args(sp)
    sp.add_argument("--index", type=int, default=0)
    sp.add_argument("--out", required=True, help="output spline file (SPL1)")
    sp.set_defaults(func=cmd_estimate)

    sp = sub.add_parser("interpolate", help="insert frames between keyframes")
    data_args(sp)
    est_args(sp)
    sp.add_argument("--skip", type=int, default=0, help="withhold this many frames between keyframes")
    sp.add_argument("--N", type=int, default=None, help="frames inserted per gap (default: skip or 1)")
    sp.add_argument("--method", choices=METHODS, default="spline")
    sp.add_argument("--fusion", choices=FUSIONS, default="classical")
    sp.add_argument("--fusion-params", help="FUS1 weight file (default: seeded weights)")
    sp.add_argument("--align", type=int, metavar="RADIUS", help="estimate the event shift first")
    sp.add_argument("--with-keyframes", action="store_true", help="also write the keyframes")
    sp.add_argument("--gate-csv", help="write per-scale mean gate values")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_interpolate)

    sp = sub.add_parser("metrics", help="PSNR and SSIM between two frame directories")
    sp.add_argument("--pred", required=True)
    sp.add_argument("--gt", required=True)
    sp.add_argument("--json", help="write a summary here")
    sp.set_defaults(func=cmd_metrics)

    sp = sub.add_parser("benchmark", help="time motion models across upsampling factors")
    data_args(sp)
    est_args(sp)
    sp.add_argument("--N", type=int, nargs="+", default=[1, 3, 10, 20])
    sp.add_argument("--methods", nargs="+", choices=METHODS, default=list(METHODS))
    sp.add_argument("--repeats", type=int, default=5)
    sp.add_argument("--warmup", type=int, default=1)
    sp.add_argument("--csv", help="write the report as CSV")
    sp.set_defaults(func=cmd_benchmark)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (InputError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
