"""Softmax splatting, backward bilinear warping and multi-scale feature pyramids."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from .errors import InputError
from .events import Frame
from .spline import SplineField, sample_spline

W_MIN = 1e-6


@dataclass(frozen=True, eq=False)
class SplatResult:
    warped: np.ndarray
    weight: np.ndarray
    holes: np.ndarray


@dataclass(frozen=True, eq=False)
class FeaturePyramid:
    """Feature maps ``C_l x H_l x W_l``, finest first."""

    levels: List[np.ndarray]

    def __post_init__(self):
        if not self.levels:
            raise InputError("a pyramid needs at least one level")
        for i, lv in enumerate(self.levels):
            if lv.ndim != 3:
                raise InputError(f"pyramid level {i} must be C x H x W")
            if i and (lv.shape[1] >= self.levels[i - 1].shape[1]
                      or lv.shape[2] >= self.levels[i - 1].shape[2]):
                raise InputError("pyramid levels must shrink")

    @property
    def depth(self) -> int:
        return len(self.levels)

    def __getitem__(self, i: int) -> np.ndarray:
        return self.levels[i]

    def __len__(self) -> int:
        return len(self.levels)


def _as_chw(x) -> np.ndarray:
    if isinstance(x, Frame):
        return x.data
    x = np.asarray(x, dtype=np.float64)
    return x[None] if x.ndim == 2 else x


def _check_flow(src: np.ndarray, flow: np.ndarray) -> None:
    if flow.ndim != 3 or flow.shape[0] != 2 or flow.shape[1:] != src.shape[1:]:
        raise InputError(f"flow shape {flow.shape} does not match source {src.shape}")


def softmax_splat(src, flow, priority, w_min: float = W_MIN) -> SplatResult:
    """Forward-warp ``src`` along ``flow``; collisions resolve by softmax of ``priority``.

    Every source pixel is pushed to its four bilinear neighbours.  Contributions
    are accumulated in source row-major order, corner order NW, NE, SW, SE, so
    the result is reproducible bit for bit.  Targets whose accumulated weight is
    below ``w_min`` are reported as holes and set to zero.
    """
    src = _as_chw(src)
    flow = np.asarray(flow, dtype=np.float64)
    priority = np.asarray(priority, dtype=np.float64)
    _check_flow(src, flow)
    if priority.shape != src.shape[1:]:
        raise InputError(f"priority shape {priority.shape} does not match source {src.shape}")
    if not np.all(np.isfinite(flow)):
        raise InputError("flow contains non-finite values")
    if not np.all(np.isfinite(priority)):
        raise InputError("priority contains non-finite values")
    c, h, w = src.shape

    z = np.exp(priority - priority.max()).ravel()
    gy, gx = np.mgrid[0:h, 0:w]
    xs = (gx + flow[0]).ravel()
    ys = (gy + flow[1]).ravel()
    x0 = np.floor(xs)
    y0 = np.floor(ys)
    ax = xs - x0
    ay = ys - y0
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)

    cx = np.stack([x0, x0 + 1, x0, x0 + 1], axis=1)
    cy = np.stack([y0, y0, y0 + 1, y0 + 1], axis=1)
    bil = np.stack([(1 - ax) * (1 - ay), ax * (1 - ay), (1 - ax) * ay, ax * ay], axis=1)
    wc = z[:, None] * bil
    inside = (cx >= 0) & (cx < w) & (cy >= 0) & (cy < h)
    idx = (cy * w + cx)[inside]
    wv = wc[inside]

    weight = np.bincount(idx, weights=wv, minlength=h * w)
    holes = weight < w_min
    vals = src.reshape(c, -1)
    warped = np.zeros((c, h * w))
    src_of = np.broadcast_to(np.arange(h * w)[:, None], inside.shape)[inside]
    safe = np.where(holes, 1.0, weight)
    for ch in range(c):
        num = np.bincount(idx, weights=wv * vals[ch][src_of], minlength=h * w)
        warped[ch] = np.where(holes, 0.0, num / safe)
    return SplatResult(warped.reshape(c, h, w), weight.reshape(h, w), holes.reshape(h, w))


def backward_warp_bilinear(src, flow) -> np.ndarray:
    """Sample ``src`` at ``q + flow(q)`` with bilinear weights, clamping at the border."""
    src = _as_chw(src)
    flow = np.asarray(flow, dtype=np.float64)
    _check_flow(src, flow)
    _, h, w = src.shape
    gy, gx = np.mgrid[0:h, 0:w]
    xs = np.clip(gx + flow[0], 0, w - 1)
    ys = np.clip(gy + flow[1], 0, h - 1)
    x0 = np.floor(xs).astype(np.int64)
    y0 = np.floor(ys).astype(np.int64)
    ax = xs - x0
    ay = ys - y0
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    top = src[:, y0, x0] * (1 - ax) + src[:, y0, x1] * ax
    bot = src[:, y1, x0] * (1 - ax) + src[:, y1, x1] * ax
    return top * (1 - ay) + bot * ay


def area_downsample(x: np.ndarray) -> np.ndarray:
    """2x box-filter downsampling of a ``... x H x W`` array (edge-padded when odd)."""
    h, w = x.shape[-2:]
    pad = [(0, 0)] * (x.ndim - 2) + [(0, h % 2), (0, w % 2)]
    x = np.pad(x, pad, mode="edge")
    return 0.25 * (x[..., ::2, ::2] + x[..., 1::2, ::2] + x[..., ::2, 1::2] + x[..., 1::2, 1::2])


def resize_bilinear(x: np.ndarray, size: Tuple[int, int]) -> np.ndarray:
    """Bilinear resize of the trailing two axes using pixel-centre alignment."""
    h, w = x.shape[-2:]
    oh, ow = size
    ys = np.clip((np.arange(oh) + 0.5) * h / oh - 0.5, 0, h - 1)
    xs = np.clip((np.arange(ow) + 0.5) * w / ow - 0.5, 0, w - 1)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    ay = (ys - y0)[:, None]
    ax = (xs - x0)[None, :]
    top = x[..., y0, :][..., x0] * (1 - ax) + x[..., y0, :][..., x1] * ax
    bot = x[..., y1, :][..., x0] * (1 - ax) + x[..., y1, :][..., x1] * ax
    return top * (1 - ay) + bot * ay


def _blur(x: np.ndarray) -> np.ndarray:
    p = np.pad(x, [(0, 0), (1, 1), (1, 1)], mode="edge")
    p = 0.25 * p[:, :-2] + 0.5 * p[:, 1:-1] + 0.25 * p[:, 2:]
    return 0.25 * p[:, :, :-2] + 0.5 * p[:, :, 1:-1] + 0.25 * p[:, :, 2:]


def _gradients(x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    p = np.pad(x, [(0, 0), (1, 1), (1, 1)], mode="edge")
    gx = 0.5 * (p[:, 1:-1, 2:] - p[:, 1:-1, :-2])
    gy = 0.5 * (p[:, 2:, 1:-1] - p[:, :-2, 1:-1])
    return gx, gy


def filter_bank(x: np.ndarray, channels: int) -> np.ndarray:
    """``channels`` feature planes from the bank I, dI/dx, dI/dy, blur(I), d blur/dx, ...

    Each response covers every input channel and responses are stacked in bank
    order, so the leading ``C_in`` planes are the input itself.  The stack is
    cut after ``channels`` planes.
    """
    planes = []
    base = x
    while len(planes) < channels:
        gx, gy = _gradients(base)
        for r in (base, gx, gy):
            planes.extend(r)
        base = _blur(base)
    return np.stack(planes[:channels])


def build_pyramid(img, depth: int = 3, channels: int = 4) -> FeaturePyramid:
    """Fixed-filter feature pyramid: area-downsample the image, then apply the bank."""
    x = _as_chw(img)
    if depth < 1:
        raise InputError("pyramid depth must be at least 1")
    if channels < 1:
        raise InputError("pyramid needs at least one channel")
    if depth > np.log2(min(x.shape[1:])):
        raise InputError(f"depth {depth} too large for {x.shape[1]}x{x.shape[2]} input")
    levels = []
    for lvl in range(depth):
        if lvl:
            x = area_downsample(x)
        levels.append(filter_bank(x, channels))
    return FeaturePyramid(levels)


def warp_pyramid(pyr: FeaturePyramid, S: SplineField, t: float,
                 w_min: float = W_MIN) -> Tuple[FeaturePyramid, List[np.ndarray]]:
    """Splat every level of ``pyr`` to time ``t`` with one flow sample from ``S``.

    Coarser levels use the bilinearly resized flow divided by ``2**level``.
    """
    if pyr[0].shape[1:] != S.shape:
        raise InputError(f"pyramid {pyr[0].shape[1:]} and spline {S.shape} geometry differ")
    sample = sample_spline(S, t)
    return splat_pyramid(pyr, sample.flow, sample.priority, w_min)


def splat_pyramid(pyr: FeaturePyramid, flow: np.ndarray, priority: np.ndarray,
                  w_min: float = W_MIN) -> Tuple[FeaturePyramid, List[np.ndarray]]:
    levels, holes = [], []
    flows = level_flows(flow, [feat.shape[1:] for feat in pyr.levels])
    for lvl, (feat, f) in enumerate(zip(pyr.levels, flows)):
        p = priority if lvl == 0 else resize_bilinear(priority, feat.shape[1:])
        res = softmax_splat(feat, f, p, w_min)
        levels.append(res.warped)
        holes.append(res.holes)
    return FeaturePyramid(levels), holes


def level_flows(flow: np.ndarray, sizes: Sequence[Tuple[int, int]]) -> List[np.ndarray]:
    """The per-level flows used by :func:`splat_pyramid`."""
    return [flow if i == 0 else resize_bilinear(flow, s) / 2 ** i for i, s in enumerate(sizes)]
