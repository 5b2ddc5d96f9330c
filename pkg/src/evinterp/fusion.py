"""Gated multi-scale fusion of warping and synthesis features.

:func:`fuse_multiscale` is a fixed operator graph whose weights come from a
``FUS1`` file or a seeded initialiser; nothing here is trained.  Without
trained weights its output stays close to the residual image it adds, which is
the same blend :func:`classical_fuse` produces.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import InputError
from .events import Frame
from .warping import FeaturePyramid, SplatResult, resize_bilinear

SOURCES = ("warp0", "warp1", "synth0", "synth1")
PREV = "prev"
FUS_MAGIC = b"FUS1"


@dataclass(frozen=True)
class FusionConfig:
    depth: int = 3
    base_channels: int = 32
    max_channels: int = 128
    feature_channels: int = 4
    image_channels: int = 1
    seed: int = 0
    param_path: Optional[str] = None

    def __post_init__(self):
        if self.depth < 1:
            raise InputError("fusion depth must be at least 1")
        if not 0 < self.base_channels <= self.max_channels:
            raise InputError("need 0 < base_channels <= max_channels")
        if self.image_channels not in (1, 3):
            raise InputError("image_channels must be 1 or 3")

    def channels(self, level: int) -> int:
        return min(self.base_channels * 2 ** level, self.max_channels)


class GateParams(dict):
    """Named weight tensors for one fusion network (a plain ``dict`` of arrays)."""

    @classmethod
    def shapes(cls, cfg: FusionConfig) -> Dict[str, Tuple[int, ...]]:
        out: Dict[str, Tuple[int, ...]] = {}
        for lvl in range(cfg.depth):
            c = cfg.channels(lvl)
            names = list(SOURCES)
            for s in SOURCES:
                out[f"stem.{s}.{lvl}.w"] = (c, cfg.feature_channels)
                out[f"stem.{s}.{lvl}.b"] = (c,)
            if lvl < cfg.depth - 1:
                out[f"stem.{PREV}.{lvl}.w"] = (c, cfg.channels(lvl + 1))
                out[f"stem.{PREV}.{lvl}.b"] = (c,)
                names.append(PREV)
            n = len(names)
            for s in names:
                out[f"gate.{s}.{lvl}.w"] = (c, n * c, 3, 3)
                out[f"gate.{s}.{lvl}.b"] = (c,)
            out[f"merge.{lvl}.w"] = (c, n * c, 3, 3)
            out[f"merge.{lvl}.b"] = (c,)
        out["out.w"] = (cfg.image_channels, cfg.channels(0))
        out["out.b"] = (cfg.image_channels,)
        return out

    @classmethod
    def seeded(cls, cfg: FusionConfig, seed: Optional[int] = None, std: float = 0.02) -> "GateParams":
        rng = np.random.default_rng(cfg.seed if seed is None else seed)
        p = cls()
        for name, shape in cls.shapes(cfg).items():
            p[name] = np.zeros(shape) if name.endswith(".b") else rng.normal(0.0, std, shape)
        return p

    @classmethod
    def zeros(cls, cfg: FusionConfig) -> "GateParams":
        return cls({name: np.zeros(shape) for name, shape in cls.shapes(cfg).items()})

    @classmethod
    def for_config(cls, cfg: FusionConfig) -> "GateParams":
        if cfg.param_path:
            return load_params(cfg.param_path, cfg)
        return cls.seeded(cfg)

    def validate(self, cfg: FusionConfig) -> None:
        for name, shape in self.shapes(cfg).items():
            if name not in self:
                raise InputError(f"missing fusion parameter {name}")
            if self[name].shape != shape:
                raise InputError(f"parameter {name} has shape {self[name].shape}, expected {shape}")
            if not np.all(np.isfinite(self[name])):
                raise InputError(f"parameter {name} is not finite")


def save_params(params: GateParams, cfg: FusionConfig, path) -> None:
    """``FUS1``: magic, u32 depth/C/C_max/feature/image channels, u32 tensor count,
    per tensor (u16 name length, name, u8 ndim, u32 dims), then all f32 data."""
    params.validate(cfg)
    names = list(GateParams.shapes(cfg))
    with open(path, "wb") as f:
        f.write(FUS_MAGIC)
        f.write(struct.pack("<6I", cfg.depth, cfg.base_channels, cfg.max_channels,
                            cfg.feature_channels, cfg.image_channels, len(names)))
        for name in names:
            raw = name.encode()
            shape = params[name].shape
            f.write(struct.pack("<HB", len(raw), len(shape)) + raw)
            f.write(struct.pack(f"<{len(shape)}I", *shape))
        for name in names:
            f.write(params[name].astype("<f4").tobytes())


def load_params(path, cfg: Optional[FusionConfig] = None) -> GateParams:
    raw = Path(path).read_bytes()
    if raw[:4] != FUS_MAGIC:
        raise InputError(f"{path}: not a FUS1 file")
    try:
        depth, base, cmax, feat, img, n = struct.unpack_from("<6I", raw, 4)
        off = 28
        header = []
        for _ in range(n):
            ln, nd = struct.unpack_from("<HB", raw, off)
            off += 3
            name = raw[off:off + ln].decode()
            off += ln
            shape = struct.unpack_from(f"<{nd}I", raw, off)
            off += 4 * nd
            header.append((name, shape))
    except (struct.error, UnicodeDecodeError) as exc:
        raise InputError(f"{path}: corrupt FUS1 header") from exc
    params = GateParams()
    for name, shape in header:
        size = int(np.prod(shape)) * 4
        if off + size > len(raw):
            raise InputError(f"{path}: truncated data for {name}")
        params[name] = np.frombuffer(raw, "<f4", int(np.prod(shape)), off).astype(np.float64).reshape(shape)
        off += size
    file_cfg = FusionConfig(depth, base, cmax, feat, img)
    params.validate(cfg or file_cfg)
    return params


_GATE_LO = np.nextafter(0.0, 1.0)
_GATE_HI = np.nextafter(1.0, 0.0)


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Logistic function kept strictly inside (0, 1) where float64 would round to the ends."""
    return np.clip(0.5 * (1.0 + np.tanh(0.5 * x)), _GATE_LO, _GATE_HI)


def conv3x3(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Same-size 3x3 convolution with edge replication; ``w`` is ``Cout x Cin x 3 x 3``."""
    cin, h, wd = x.shape
    if w.shape[1] != cin:
        raise InputError(f"conv expects {w.shape[1]} input channels, got {cin}")
    p = np.pad(x, [(0, 0), (1, 1), (1, 1)], mode="edge")
    cols = sliding_window_view(p, (3, 3), axis=(1, 2))  # Cin x H x W x 3 x 3
    cols = cols.transpose(0, 3, 4, 1, 2).reshape(cin * 9, h * wd)
    out = w.reshape(w.shape[0], -1) @ cols
    return (out + b[:, None]).reshape(w.shape[0], h, wd)


def conv1x1(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    c, h, wd = x.shape
    return (w @ x.reshape(c, -1) + b[:, None]).reshape(w.shape[0], h, wd)


def gated_compress(src: np.ndarray, ctx: np.ndarray, weight: np.ndarray, bias: np.ndarray,
                   return_gate: bool = False):
    """Attenuate ``src`` by a sigmoid gate computed from ``src`` and its context."""
    if src.shape[1:] != ctx.shape[1:]:
        raise InputError(f"gate source {src.shape} and context {ctx.shape} are not aligned")
    if weight.shape[0] != src.shape[0]:
        raise InputError("gate must have one output channel per source channel")
    gate = sigmoid(conv3x3(np.concatenate([src, ctx]), weight, bias))
    out = src * gate
    return (out, gate) if return_gate else out


def _blend(w0, w1, valid0, valid1, s0, s1, t: float) -> np.ndarray:
    both = valid0 & valid1
    out = np.where(both, (1 - t) * w0 + t * w1, (1 - t) * s0 + t * s1)
    out = np.where(valid0 & ~valid1, w0, out)
    out = np.where(valid1 & ~valid0, w1, out)
    return np.clip(out, 0.0, 1.0)


def classical_fuse(warped0: SplatResult, warped1: SplatResult, pseudo0: Frame, pseudo1: Frame,
                   t: float) -> Frame:
    """Time-weighted blend of the valid warps, falling back to the pseudo-frames in holes."""
    if not 0.0 <= t <= 1.0:
        raise InputError(f"normalized time {t} outside [0, 1]")
    shape = pseudo0.data.shape
    if any(x.shape != shape for x in (warped0.warped, warped1.warped, pseudo1.data)):
        raise InputError("classical fusion inputs differ in geometry")
    out = _blend(warped0.warped, warped1.warped, ~warped0.holes, ~warped1.holes,
                 pseudo0.data, pseudo1.data, t)
    return Frame(out, pseudo0.t)


def fuse_multiscale(warp0: FeaturePyramid, warp1: FeaturePyramid, synth0: FeaturePyramid,
                    synth1: FeaturePyramid, holes0: Sequence[np.ndarray], holes1: Sequence[np.ndarray],
                    params: GateParams, cfg: FusionConfig = FusionConfig(), t: float = 0.5,
                    t_us: int = 0, return_gates: bool = False):
    """Coarse-to-fine gated fusion of four feature pyramids into one frame.

    Each scale projects every source to ``channels(level)`` features, gates each
    one against the concatenation of the others, and merges the gated stack with
    a 3x3 convolution.  Below the coarsest scale the upsampled previous stage is
    a fifth gated source.  The finest stage is projected to image channels and
    added to the blend of the warped intensities (synthesis intensities in holes).
    """
    pyrs = dict(zip(SOURCES, (warp0, warp1, synth0, synth1)))
    D = cfg.depth
    for name, pyr in pyrs.items():
        if pyr.depth != D:
            raise InputError(f"{name} pyramid has depth {pyr.depth}, fusion expects {D}")
        for lvl in range(D):
            if pyr[lvl].shape != warp0[lvl].shape:
                raise InputError(f"{name} level {lvl} shape {pyr[lvl].shape} differs from warp0")
            if pyr[lvl].shape[0] != cfg.feature_channels:
                raise InputError(f"{name} has {pyr[lvl].shape[0]} channels, expected {cfg.feature_channels}")
    if len(holes0) != D or len(holes1) != D:
        raise InputError("need one hole mask per pyramid level")
    params.validate(cfg)

    gates: Dict[Tuple[int, str], np.ndarray] = {}
    prev = None
    for lvl in range(D - 1, -1, -1):
        size = warp0[lvl].shape[1:]
        feats = {s: conv1x1(pyrs[s][lvl], params[f"stem.{s}.{lvl}.w"], params[f"stem.{s}.{lvl}.b"])
                 for s in SOURCES}
        if prev is not None:
            up = resize_bilinear(prev, size)
            feats[PREV] = conv1x1(up, params[f"stem.{PREV}.{lvl}.w"], params[f"stem.{PREV}.{lvl}.b"])
        names = list(feats)
        gated = []
        for s in names:
            ctx = np.concatenate([feats[o] for o in names if o != s])
            g_out, g = gated_compress(feats[s], ctx, params[f"gate.{s}.{lvl}.w"],
                                      params[f"gate.{s}.{lvl}.b"], return_gate=True)
            gates[(lvl, s)] = g
            gated.append(g_out)
        merged = conv3x3(np.concatenate(gated), params[f"merge.{lvl}.w"], params[f"merge.{lvl}.b"])
        prev = np.maximum(merged, 0.0)

    ic = cfg.image_channels
    residual = _blend(warp0[0][:ic], warp1[0][:ic], ~np.asarray(holes0[0]), ~np.asarray(holes1[0]),
                      synth0[0][:ic], synth1[0][:ic], t)
    out = conv1x1(prev, params["out.w"], params["out.b"]) + residual
    frame = Frame(np.clip(out, 0.0, 1.0), t_us)
    return (frame, gates) if return_gates else frame


def gate_statistics(gates: Dict[Tuple[int, str], np.ndarray]) -> List[Tuple[int, str, float]]:
    """Mean gate value per (scale, source), sorted by scale then source name."""
    return [(lvl, src, float(np.mean(g))) for (lvl, src), g in sorted(gates.items())]


def write_gate_csv(stats: Sequence[Tuple[int, str, float]], path) -> None:
    with open(path, "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["scale", "source", "mean_gate"])
        for lvl, src, mean in stats:
            wr.writerow([lvl, src, f"{mean:.6f}"])
