"""Classical spline motion estimation from boundary frames and events.

Dense flow comes from a coarse-to-fine Horn-Schunck solver.  Events enter
through pseudo-frames (the keyframe brightened by the event integral up to an
intermediate time), which give the solver intermediate anchors; the resulting
flow samples are fitted with a motion spline.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
from scipy import ndimage

from .errors import InputError
from .events import EventStream, Frame, synthesize_pseudo_frame
from .spline import FlowField, SplineField, fit_spline, sample_spline
from .warping import area_downsample, backward_warp_bilinear, resize_bilinear

MODES = ("images", "events", "both")

_HS_AVG = np.array([[1, 2, 1], [2, 0, 2], [1, 2, 1]], dtype=np.float64) / 12.0


@dataclass(frozen=True)
class EstimatorConfig:
    levels: int = 4
    iterations: int = 100
    alpha: float = 25.0
    warps: int = 4
    samples: Optional[int] = None
    mode: str = "both"
    contrast_threshold: float = 0.1
    log_eps: float = 1e-3
    beta: float = 10.0
    gray: float = 0.5
    debias: bool = True

    def __post_init__(self):
        if self.levels < 1:
            raise InputError("estimator needs at least one pyramid level")
        if self.iterations < 1 or self.warps < 1:
            raise InputError("iterations and warps must be positive")
        if self.mode not in MODES:
            raise InputError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.alpha <= 0 or self.contrast_threshold <= 0:
            raise InputError("alpha and contrast threshold must be positive")

    def sample_count(self, K: int) -> int:
        return 2 * K if self.samples is None else self.samples

    @classmethod
    def from_file(cls, path, **overrides) -> "EstimatorConfig":
        """Read a flat ``key = value`` file; ``#`` starts a comment."""
        known = {f.name: f.type for f in fields(cls)}
        values = {}
        for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise InputError(f"{path}:{lineno}: expected 'key = value'")
            key, val = (s.strip() for s in line.split("=", 1))
            if key not in known:
                raise InputError(f"{path}:{lineno}: unknown key {key!r}")
            values[key] = _parse_value(cls, key, val)
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)

    def as_dict(self) -> dict:
        return asdict(self)


def _parse_value(cls, key: str, raw: str):
    default = getattr(cls, key)
    if key == "samples":
        return None if raw.lower() in ("none", "") else int(raw)
    if key == "debias":
        if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
            raise InputError(f"bad value for {key}: {raw!r}")
        return raw.lower() in ("true", "1", "yes")
    try:
        return type(default)(raw)
    except ValueError as exc:
        raise InputError(f"bad value for {key}: {raw!r}") from exc


def _gray(img) -> np.ndarray:
    if isinstance(img, Frame):
        return img.luma()
    return np.asarray(img, dtype=np.float64)


def _smooth(x: np.ndarray) -> np.ndarray:
    return ndimage.gaussian_filter(x, 0.8, mode="nearest")


def _grad(x: np.ndarray):
    gy, gx = np.gradient(x)
    return gx, gy


def _hs_level(a: np.ndarray, b: np.ndarray, flow: np.ndarray, alpha: float,
              iterations: int, warps: int) -> np.ndarray:
    u, v = flow[0].copy(), flow[1].copy()
    a2 = alpha * alpha
    ax, ay = _grad(a)
    per_warp = max(1, iterations // warps)
    for _ in range(warps):
        bw = backward_warp_bilinear(b[None], np.stack([u, v]))[0]
        bx, by = _grad(bw)
        ix = 0.5 * (ax + bx)
        iy = 0.5 * (ay + by)
        it = bw - a
        u0, v0 = u.copy(), v.copy()
        denom = a2 + ix * ix + iy * iy
        for _ in range(per_warp):
            ub = ndimage.correlate(u, _HS_AVG, mode="nearest")
            vb = ndimage.correlate(v, _HS_AVG, mode="nearest")
            r = (ix * (ub - u0) + iy * (vb - v0) + it) / denom
            u = ub - ix * r
            v = vb - iy * r
    return np.stack([u, v])


def dense_flow(I_a, I_b, cfg: EstimatorConfig = EstimatorConfig()) -> FlowField:
    """Forward flow from ``I_a`` to ``I_b``: ``I_b(q + F(q)) ~ I_a(q)``.

    Images are compared in luma scaled to [0, 255], the range the smoothness
    weight ``alpha`` is expressed in.
    """
    a = _gray(I_a) * 255.0
    b = _gray(I_b) * 255.0
    if a.shape != b.shape:
        raise InputError(f"flow inputs differ in geometry: {a.shape} vs {b.shape}")
    pa, pb = [_smooth(a)], [_smooth(b)]
    for _ in range(cfg.levels - 1):
        if min(pa[-1].shape) < 8:
            break
        pa.append(area_downsample(_smooth(pa[-1])))
        pb.append(area_downsample(_smooth(pb[-1])))
    flow = np.zeros((2,) + pa[-1].shape)
    for lvl in range(len(pa) - 1, -1, -1):
        if flow.shape[1:] != pa[lvl].shape:
            scale = np.array([pa[lvl].shape[1] / flow.shape[2], pa[lvl].shape[0] / flow.shape[1]])
            flow = resize_bilinear(flow, pa[lvl].shape) * scale[:, None, None]
        flow = _hs_level(pa[lvl], pb[lvl], flow, cfg.alpha, cfg.iterations, cfg.warps)
    return flow


def _time_us(I0: Frame, I1: Frame, t: float) -> int:
    return I0.t + int(round(t * (I1.t - I0.t)))


def _pseudo(base: Frame, ev: EventStream, t_us: int, cfg: EstimatorConfig) -> Frame:
    """Flow anchor at ``t_us``: the pseudo-frame, optionally debiased.

    A pixel's reference level trails its true log intensity by up to one
    threshold in the direction it last fired, so the plain pseudo-frame
    systematically understates motion.  Debiasing adds half a threshold in
    the direction of each pixel's most recent event inside the window.
    """
    pseudo = synthesize_pseudo_frame(base, ev, t_us, cfg.contrast_threshold, cfg.log_eps)
    if not cfg.debias:
        return pseudo
    sub = ev.window(base.t, t_us)
    if len(sub) == 0:
        return pseudo
    last = np.zeros(ev.width * ev.height)
    last[sub.y * ev.width + sub.x] = sub.p  # later events overwrite earlier ones
    shift = 0.5 * cfg.contrast_threshold * last.reshape(ev.height, ev.width)
    eps = cfg.log_eps
    out = np.exp(np.log(pseudo.data + eps) + shift[None]) - eps
    out = np.where(shift[None] == 0, pseudo.data, out)
    return Frame(np.clip(out, 0.0, 1.0), t_us)


def estimate_priority(I0, flows: Sequence[FlowField], targets: Sequence, beta: float = 10.0) -> np.ndarray:
    """Photometric-consistency priority, one plane per flow.

    ``priority_k(q) = -beta * mean_c |I0(q) - target_k(q + flow_k(q))|``: pixels
    whose forward motion lands on matching content score highest (0).
    """
    ref = I0.data if isinstance(I0, Frame) else np.asarray(I0, dtype=np.float64)
    ref = ref[None] if ref.ndim == 2 else ref
    out = []
    for flow, target in zip(flows, targets, strict=True):
        tgt = target.data if isinstance(target, Frame) else np.asarray(target, dtype=np.float64)
        tgt = tgt[None] if tgt.ndim == 2 else tgt
        if tgt.shape != ref.shape:
            raise InputError("priority target and reference frame differ in shape")
        resid = np.abs(ref - backward_warp_bilinear(tgt, flow)).mean(axis=0)
        out.append(-beta * resid)
    return np.stack(out)


def estimate_spline_motion(I0: Frame, I1: Frame, ev: EventStream, K: int = 4,
                           cfg: EstimatorConfig = EstimatorConfig()) -> SplineField:
    """Motion spline from ``I0`` over ``[I0.t, I1.t]``.

    ``both``: flows from ``I0`` to pseudo-frames at ``M`` uniform times in
    (0, 1] plus the keyframe flow ``I0 -> I1``, least-squares fitted.
    ``images``: the keyframe flow only, spread linearly over the control points.
    ``events``: flows from a flat gray frame to its event-driven pseudo-frames.
    """
    if I0.shape != I1.shape or (ev.height, ev.width) != I0.shape:
        raise InputError("frames and events must share geometry")
    if I1.t <= I0.t:
        raise InputError("keyframes must be in increasing time order")
    M = cfg.sample_count(K)
    if M < K:
        raise InputError(f"need at least K={K} sample times, got {M}")
    ctrl = np.linspace(0.0, 1.0, K)
    h, w = I0.shape
    data = np.zeros((K, 3, h, w))

    if cfg.mode == "images":
        F01 = dense_flow(I0, I1, cfg)
        data[:, :2] = ctrl[:, None, None, None] * F01[None]
        targets = [I1] * K
        ref = I0
    else:
        if cfg.mode == "events":
            if len(ev.window(I0.t, I1.t)) == 0:
                raise InputError("events-only estimation needs events in the keyframe interval")
            ref = Frame(np.full((1, h, w), cfg.gray), I0.t)
        else:
            ref = I0
        samples = []
        for m in range(1, M + 1):
            t = m / M
            pseudo = _pseudo(ref, ev, _time_us(I0, I1, t), cfg)
            samples.append((t, dense_flow(ref, pseudo, cfg), None))
        if cfg.mode == "both":
            samples.append((1.0, dense_flow(I0, I1, cfg), None))
        data[:, :2] = fit_spline(samples, K).data[:, :2]
        targets = [_pseudo(ref, ev, _time_us(I0, I1, t), cfg) for t in ctrl]
        if cfg.mode == "both":
            targets[-1] = I1

    flows = [data[k, :2] for k in range(K)]
    data[:, 2] = estimate_priority(ref, flows, targets, cfg.beta)
    return SplineField(data)


def nonparametric_motion(I0: Frame, I1: Frame, ev: EventStream, t: float,
                         cfg: EstimatorConfig = EstimatorConfig()) -> FlowField:
    """One independent flow solve from ``I0`` to its pseudo-frame at ``t``."""
    if not 0.0 <= t <= 1.0:
        raise InputError(f"normalized time {t} outside [0, 1]")
    if I0.shape != I1.shape:
        raise InputError("keyframes differ in geometry")
    pseudo = _pseudo(I0, ev, _time_us(I0, I1, t), cfg)
    return dense_flow(I0, pseudo, cfg)


def sampled_flows(S: SplineField, times: Sequence[float]) -> List[FlowField]:
    return [sample_spline(S, t).flow for t in times]


def with_mode(cfg: EstimatorConfig, mode: str) -> EstimatorConfig:
    return replace(cfg, mode=mode)
