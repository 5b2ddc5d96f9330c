"""End-to-end interpolation over a frame sequence with events."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import InputError
from .estimator import (EstimatorConfig, estimate_priority, estimate_spline_motion,
                        nonparametric_motion)
from .events import EventStream, Frame, synthesize_pseudo_frame
from .fusion import FusionConfig, GateParams, classical_fuse, fuse_multiscale
from .metrics import psnr, ssim
from .spline import linear_flow, sample_spline
from .warping import build_pyramid, softmax_splat, splat_pyramid

METHODS = ("spline", "nonparametric", "linear")
FUSIONS = ("classical", "gated")


@dataclass(frozen=True, eq=False)
class Dataset:
    """Frames with timestamps and the events recorded alongside them.

    ``shift`` is the offset of the event sensor relative to the frames as
    returned by :func:`evinterp.align.align_streams`.
    """

    frames: List[Frame]
    events: EventStream
    shift: Tuple[int, int] = (0, 0)

    def __post_init__(self):
        if not self.frames:
            raise InputError("dataset has no frames")
        shape = self.frames[0].shape
        for i, f in enumerate(self.frames):
            if f.shape != shape or f.channels != self.frames[0].channels:
                raise InputError(f"frame {i} geometry {f.data.shape} differs from frame 0")
            if i and f.t <= self.frames[i - 1].t:
                raise InputError(f"frame {i} timestamp {f.t} is not after {self.frames[i - 1].t}")
        if (self.events.height, self.events.width) != shape:
            raise InputError(f"events are {self.events.width}x{self.events.height}, "
                             f"frames are {shape[1]}x{shape[0]}")

    def aligned_events(self) -> EventStream:
        dx, dy = self.shift
        return self.events if (dx, dy) == (0, 0) else self.events.shifted(-dx, -dy)


@dataclass(frozen=True)
class InterpolationOptions:
    N: int = 1
    skip: int = 0
    method: str = "spline"
    fusion: str = "classical"
    K: int = 4
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    fusion_cfg: FusionConfig = field(default_factory=FusionConfig)
    threads: int = 1

    def __post_init__(self):
        if self.N < 1:
            raise InputError("need at least one inserted frame per gap")
        if self.skip < 0:
            raise InputError("skip must be non-negative")
        if self.method not in METHODS:
            raise InputError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.fusion not in FUSIONS:
            raise InputError(f"fusion must be one of {FUSIONS}, got {self.fusion!r}")
        if self.threads < 1:
            raise InputError("threads must be positive")


@dataclass(eq=False)
class InterpolationResult:
    keyframes: List[Frame]
    withheld: List[List[Frame]]
    inserted: List[List[Frame]]

    def sequence(self) -> List[Frame]:
        """Keyframes with the inserted frames in between, in time order."""
        out = [self.keyframes[0]]
        for gap, key in zip(self.inserted, self.keyframes[1:]):
            out.extend(gap)
            out.append(key)
        return out


def insertion_times(N: int) -> np.ndarray:
    return np.arange(1, N + 1) / (N + 1)


def split_keyframes(frames: Sequence[Frame], skip: int) -> Tuple[List[Frame], List[List[Frame]]]:
    """Keep every ``skip + 1``-th frame; the frames in between are withheld."""
    step = skip + 1
    if len(frames) < step + 1:
        raise InputError(f"'{skip} skip' needs at least {step + 1} frames, got {len(frames)}")
    n_gaps = (len(frames) - 1) // step
    keys = [frames[i * step] for i in range(n_gaps + 1)]
    held = [list(frames[i * step + 1:(i + 1) * step]) for i in range(n_gaps)]
    return keys, held


@dataclass(frozen=True, eq=False)
class _Gap:
    I0: Frame
    I1: Frame
    ev: EventStream
    ev_rev: EventStream

    @property
    def J0(self) -> Frame:
        return self.I1.with_time(self.I0.t)

    @property
    def J1(self) -> Frame:
        return self.I0.with_time(self.I1.t)

    def t_us(self, t: float) -> int:
        return self.I0.t + int(round(t * (self.I1.t - self.I0.t)))


def _make_gap(I0: Frame, I1: Frame, events: EventStream) -> _Gap:
    ev = events.window(I0.t, I1.t)
    return _Gap(I0, I1, ev, ev.time_reversed(I0.t, I1.t))


class _Motion:
    """Flows and priorities from each keyframe toward the insertion times."""

    def __init__(self, gap: _Gap, opts: InterpolationOptions):
        self.gap, self.opts = gap, opts
        cfg = opts.estimator
        if opts.method in ("spline", "linear"):
            self.S0 = estimate_spline_motion(gap.I0, gap.I1, gap.ev, opts.K, cfg)
            self.S1 = estimate_spline_motion(gap.J0, gap.J1, gap.ev_rev, opts.K, cfg)
            self.end0 = sample_spline(self.S0, 1.0)
            self.end1 = sample_spline(self.S1, 1.0)

    def at(self, t: float, pseudo0: Frame, pseudo1: Frame):
        g, cfg = self.gap, self.opts.estimator
        if self.opts.method == "spline":
            a, b = sample_spline(self.S0, t), sample_spline(self.S1, 1.0 - t)
            return (a.flow, a.priority), (b.flow, b.priority)
        if self.opts.method == "linear":
            return ((linear_flow(self.end0.flow, t), self.end0.priority),
                    (linear_flow(self.end1.flow, 1.0 - t), self.end1.priority))
        f0 = nonparametric_motion(g.I0, g.I1, g.ev, t, cfg)
        f1 = nonparametric_motion(g.J0, g.J1, g.ev_rev, 1.0 - t, cfg)
        p0 = estimate_priority(g.I0, [f0], [pseudo0], cfg.beta)[0]
        p1 = estimate_priority(g.I1, [f1], [pseudo1], cfg.beta)[0]
        return (f0, p0), (f1, p1)


def _pseudo_pair(gap: _Gap, t: float, cfg: EstimatorConfig) -> Tuple[Frame, Frame]:
    t_us = gap.t_us(t)
    p0 = synthesize_pseudo_frame(gap.I0, gap.ev, t_us, cfg.contrast_threshold, cfg.log_eps)
    rev_us = gap.I0.t + gap.I1.t - t_us
    p1 = synthesize_pseudo_frame(gap.J0, gap.ev_rev, rev_us, cfg.contrast_threshold, cfg.log_eps)
    return p0, p1.with_time(t_us)


def _fusion_cfg(opts: InterpolationOptions, frame: Frame) -> FusionConfig:
    c = frame.channels
    return replace(opts.fusion_cfg, image_channels=c,
                   feature_channels=max(opts.fusion_cfg.feature_channels, c))


def interpolate_gap(I0: Frame, I1: Frame, events: EventStream,
                    opts: InterpolationOptions = InterpolationOptions(),
                    params: Optional[GateParams] = None) -> List[Frame]:
    """``opts.N`` frames at ``t_i = i / (N + 1)`` between two keyframes.

    Both keyframes are forward-warped toward each ``t_i`` (``I1`` through the
    time-reversed events) and the two warps are fused.
    """
    if I0.shape != I1.shape or I0.channels != I1.channels:
        raise InputError("keyframes differ in geometry")
    gap = _make_gap(I0, I1, events)
    motion = _Motion(gap, opts)
    fcfg = _fusion_cfg(opts, I0)
    if opts.fusion == "gated":
        params = params if params is not None else GateParams.for_config(fcfg)
        pyr0 = build_pyramid(I0, fcfg.depth, fcfg.feature_channels)
        pyr1 = build_pyramid(I1, fcfg.depth, fcfg.feature_channels)
    out = []
    for t in insertion_times(opts.N):
        pseudo0, pseudo1 = _pseudo_pair(gap, t, opts.estimator)
        (f0, p0), (f1, p1) = motion.at(t, pseudo0, pseudo1)
        if opts.fusion == "classical":
            frame = classical_fuse(softmax_splat(I0, f0, p0), softmax_splat(I1, f1, p1),
                                   pseudo0, pseudo1, t)
        else:
            w0, h0 = splat_pyramid(pyr0, f0, p0)
            w1, h1 = splat_pyramid(pyr1, f1, p1)
            s0 = build_pyramid(pseudo0, fcfg.depth, fcfg.feature_channels)
            s1 = build_pyramid(pseudo1, fcfg.depth, fcfg.feature_channels)
            frame = fuse_multiscale(w0, w1, s0, s1, h0, h1, params, fcfg, t, gap.t_us(t))
        out.append(frame.with_time(gap.t_us(t)))
    return out


def interpolate(ds: Dataset, opts: InterpolationOptions = InterpolationOptions(),
                params: Optional[GateParams] = None) -> InterpolationResult:
    """Interpolate every keyframe gap; gaps run on ``opts.threads`` workers."""
    keys, held = split_keyframes(ds.frames, opts.skip)
    events = ds.aligned_events()
    if opts.fusion == "gated" and params is None:
        params = GateParams.for_config(_fusion_cfg(opts, keys[0]))

    def run(i):
        return interpolate_gap(keys[i], keys[i + 1], events, opts, params)

    idx = range(len(keys) - 1)
    if opts.threads == 1:
        inserted = [run(i) for i in idx]
    else:
        with ThreadPoolExecutor(opts.threads) as pool:
            inserted = list(pool.map(run, idx))
    return InterpolationResult(keys, held, inserted)


def first_gap_gates(ds: Dataset, opts: InterpolationOptions,
                    params: Optional[GateParams] = None) -> dict:
    """Gate tensors of the gated fusion for the first inserted frame of the first gap."""
    keys, _ = split_keyframes(ds.frames, opts.skip)
    I0, I1 = keys[0], keys[1]
    fcfg = _fusion_cfg(opts, I0)
    params = params if params is not None else GateParams.for_config(fcfg)
    gap = _make_gap(I0, I1, ds.aligned_events())
    t = float(insertion_times(opts.N)[0])
    pseudo0, pseudo1 = _pseudo_pair(gap, t, opts.estimator)
    (f0, p0), (f1, p1) = _Motion(gap, opts).at(t, pseudo0, pseudo1)
    w0, h0 = splat_pyramid(build_pyramid(I0, fcfg.depth, fcfg.feature_channels), f0, p0)
    w1, h1 = splat_pyramid(build_pyramid(I1, fcfg.depth, fcfg.feature_channels), f1, p1)
    s0 = build_pyramid(pseudo0, fcfg.depth, fcfg.feature_channels)
    s1 = build_pyramid(pseudo1, fcfg.depth, fcfg.feature_channels)
    _, gates = fuse_multiscale(w0, w1, s0, s1, h0, h1, params, fcfg, t, return_gates=True)
    return gates


def keyframe_average(result: InterpolationResult) -> List[List[Frame]]:
    """Baseline: every withheld frame predicted by the mean of its two keyframes."""
    out = []
    for I0, I1, held in zip(result.keyframes, result.keyframes[1:], result.withheld):
        avg = 0.5 * (I0.data + I1.data)
        out.append([Frame(avg, f.t) for f in held])
    return out


@dataclass(frozen=True)
class FrameScore:
    t: int
    psnr: float
    ssim: float
    baseline_psnr: float
    baseline_ssim: float


def evaluate(result: InterpolationResult) -> List[FrameScore]:
    """Score inserted frames against the withheld ones (requires ``N == skip``)."""
    base = keyframe_average(result)
    scores = []
    for gap, held, avg in zip(result.inserted, result.withheld, base):
        if len(gap) != len(held):
            raise InputError(f"{len(gap)} inserted frames per gap cannot be scored against "
                             f"{len(held)} withheld frames")
        for pred, gt, b in zip(gap, held, avg):
            scores.append(FrameScore(gt.t, psnr(pred, gt), ssim(pred, gt), psnr(b, gt), ssim(b, gt)))
    return scores


def warp_psnr(I0: Frame, target: Frame, flow: np.ndarray, priority: np.ndarray) -> float:
    """PSNR of ``I0`` forward-warped by ``flow`` against ``target``, holes excluded."""
    res = softmax_splat(I0, flow, priority)
    return psnr(res.warped, target.data, mask=~res.holes)


def midpoint_warp_scores(I0: Frame, I1: Frame, ev: EventStream, gt_mid: Frame, K: int = 4,
                         cfg: EstimatorConfig = EstimatorConfig()) -> dict:
    """Mid-time warping PSNR of ``I0`` under each motion model.

    Keys: ``nonparametric``, ``spline`` (images and events), ``linear`` (the
    spline's endpoint flow scaled in time), ``images`` and ``events`` (spline
    fits from one modality).
    """
    t = 0.5
    gap = _make_gap(I0, I1, ev)
    scores = {}
    S = estimate_spline_motion(I0, I1, gap.ev, K, replace(cfg, mode="both"))
    mid, end = sample_spline(S, t), sample_spline(S, 1.0)
    scores["spline"] = warp_psnr(I0, gt_mid, mid.flow, mid.priority)
    scores["linear"] = warp_psnr(I0, gt_mid, linear_flow(end.flow, t), end.priority)
    pseudo = synthesize_pseudo_frame(I0, gap.ev, gap.t_us(t), cfg.contrast_threshold, cfg.log_eps)
    F = nonparametric_motion(I0, I1, gap.ev, t, cfg)
    scores["nonparametric"] = warp_psnr(I0, gt_mid, F, estimate_priority(I0, [F], [pseudo], cfg.beta)[0])
    for mode in ("images", "events"):
        s = sample_spline(estimate_spline_motion(I0, I1, gap.ev, K, replace(cfg, mode=mode)), t)
        scores[mode] = warp_psnr(I0, gt_mid, s.flow, s.priority)
    return scores

