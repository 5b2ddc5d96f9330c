"""Event data model, voxel grids, an ideal contrast-threshold simulator and
event-integral brightness synthesis.

Event timestamps are integer microseconds.  Streams are stored as parallel
numpy arrays (``t``, ``x``, ``y``, ``p``) and treated as immutable.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .errors import InputError

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


def _freeze(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Event:
    t: int
    x: int
    y: int
    p: int

    def __post_init__(self):
        if self.p not in (1, -1):
            raise InputError(f"polarity must be +1 or -1, got {self.p}")
        if self.t < 0:
            raise InputError(f"negative timestamp {self.t}")


@dataclass(frozen=True, eq=False)
class EventStream:
    """Time-sorted polarity events on a ``width`` x ``height`` sensor."""

    width: int
    height: int
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, dtype=np.int64).reshape(-1)
        x = np.asarray(self.x, dtype=np.int64).reshape(-1)
        y = np.asarray(self.y, dtype=np.int64).reshape(-1)
        p = np.asarray(self.p, dtype=np.int8).reshape(-1)
        n = len(t)
        if not (len(x) == len(y) == len(p) == n):
            raise InputError("event arrays differ in length")
        if self.width <= 0 or self.height <= 0:
            raise InputError(f"invalid sensor size {self.width}x{self.height}")
        if n:
            bad = np.flatnonzero((x < 0) | (x >= self.width) | (y < 0) | (y >= self.height))
            if len(bad):
                raise InputError(f"event {bad[0]} at ({x[bad[0]]}, {y[bad[0]]}) outside "
                                 f"{self.width}x{self.height} sensor")
            bad = np.flatnonzero((p != 1) & (p != -1))
            if len(bad):
                raise InputError(f"event {bad[0]} has polarity {p[bad[0]]}")
            if t[0] < 0:
                raise InputError("negative event timestamp")
            bad = np.flatnonzero(np.diff(t) < 0)
            if len(bad):
                raise InputError(f"events not sorted by time at index {bad[0] + 1}")
        for name, arr in (("t", t), ("x", x), ("y", y), ("p", p)):
            object.__setattr__(self, name, _freeze(arr))

    @classmethod
    def empty(cls, width: int, height: int) -> "EventStream":
        z = np.zeros(0, dtype=np.int64)
        return cls(width, height, z, z, z, z)

    @classmethod
    def from_events(cls, width: int, height: int, events: Sequence[Event]) -> "EventStream":
        if not events:
            return cls.empty(width, height)
        arr = np.array([(e.t, e.x, e.y, e.p) for e in events], dtype=np.int64)
        return cls(width, height, arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3])

    def __len__(self) -> int:
        return len(self.t)

    def __iter__(self) -> Iterator[Event]:
        for i in range(len(self)):
            yield Event(int(self.t[i]), int(self.x[i]), int(self.y[i]), int(self.p[i]))

    def __eq__(self, other) -> bool:
        if not isinstance(other, EventStream):
            return NotImplemented
        return (self.width == other.width and self.height == other.height
                and all(np.array_equal(getattr(self, k), getattr(other, k)) for k in "txyp"))

    def _take(self, idx) -> "EventStream":
        return EventStream(self.width, self.height, self.t[idx], self.x[idx], self.y[idx], self.p[idx])

    def window(self, t_a: int, t_b: int, closed_left: bool = False) -> "EventStream":
        """Events with ``t_a < t <= t_b`` (or ``t_a <= t`` with ``closed_left``)."""
        lo = np.searchsorted(self.t, t_a, side="left" if closed_left else "right")
        hi = np.searchsorted(self.t, t_b, side="right")
        return self._take(slice(lo, max(lo, hi)))

    def time_reversed(self, t_start: int, t_end: int) -> "EventStream":
        """Play the stream backwards over ``(t_start, t_end]``.

        Polarities flip.  Times map through ``t_start + t_end + 1 - t``, which
        takes the half-open interval onto itself so window semantics survive.
        """
        ev = self.window(t_start, t_end)
        order = np.arange(len(ev))[::-1]
        t = t_start + t_end + 1 - ev.t[order]
        return EventStream(self.width, self.height, t, ev.x[order], ev.y[order], -ev.p[order])

    def shifted(self, dx: int, dy: int) -> "EventStream":
        """Translate event coordinates, dropping events that leave the sensor."""
        x = self.x + dx
        y = self.y + dy
        keep = (x >= 0) & (x < self.width) & (y >= 0) & (y < self.height)
        return EventStream(self.width, self.height, self.t[keep], x[keep], y[keep], self.p[keep])

    @staticmethod
    def concatenate(streams: Sequence["EventStream"]) -> "EventStream":
        if not streams:
            raise InputError("nothing to concatenate")
        w, h = streams[0].width, streams[0].height
        if any(s.width != w or s.height != h for s in streams):
            raise InputError("cannot concatenate streams with different geometry")
        cat = [np.concatenate([getattr(s, k) for s in streams]) for k in "txyp"]
        return EventStream(w, h, *cat)


@dataclass(frozen=True, eq=False)
class Frame:
    """An intensity image in [0, 1] stored channel-first (C x H x W)."""

    data: np.ndarray
    t: int = 0

    def __post_init__(self):
        d = np.array(self.data, dtype=np.float64)
        if d.ndim == 2:
            d = d[None]
        if d.ndim != 3 or d.shape[0] not in (1, 3):
            raise InputError(f"frame data must be HxW or CxHxW with C in {{1,3}}, got {d.shape}")
        if not np.all(np.isfinite(d)) or d.min(initial=0) < 0 or d.max(initial=0) > 1:
            raise InputError("frame values must be finite and within [0, 1]")
        object.__setattr__(self, "data", _freeze(d))
        object.__setattr__(self, "t", int(self.t))

    @classmethod
    def from_hwc(cls, img: np.ndarray, t: int = 0) -> "Frame":
        img = np.asarray(img)
        if img.ndim == 3:
            img = np.moveaxis(img, -1, 0)
        return cls(img, t)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape[1:]

    def luma(self) -> np.ndarray:
        if self.channels == 1:
            return self.data[0]
        return np.tensordot(LUMA_WEIGHTS, self.data, axes=1)

    def to_hwc(self) -> np.ndarray:
        return np.moveaxis(self.data, 0, -1)

    def with_time(self, t: int) -> "Frame":
        return Frame(self.data, t)


@dataclass(frozen=True)
class SimulatorConfig:
    contrast_threshold: float = 0.1
    refractory_us: int = 0
    log_eps: float = 1e-3

    def __post_init__(self):
        if not self.contrast_threshold > 0:
            raise InputError("contrast threshold must be positive")
        if self.refractory_us < 0:
            raise InputError("refractory period must be non-negative")
        if not self.log_eps > 0:
            raise InputError("log epsilon must be positive")


@dataclass(frozen=True, eq=False)
class VoxelGrid:
    t_a: int
    t_b: int
    data: np.ndarray = field(repr=False)

    @property
    def bins(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]


def simulate_events(frames: Sequence[Frame], cfg: SimulatorConfig = SimulatorConfig()) -> EventStream:
    """Convert a timestamped frame sequence to events.

    Each pixel integrates log intensity, interpolated linearly in time between
    consecutive frames, and fires whenever it moves a full contrast threshold
    away from its reference level.  Crossing times are solved in closed form
    per segment and rounded into ``(T0, T1]``.
    """
    if len(frames) < 2:
        raise InputError("need at least two frames to simulate events")
    h, w = frames[0].shape
    for i, f in enumerate(frames):
        if f.shape != (h, w):
            raise InputError(f"frame {i} has shape {f.shape}, expected {(h, w)}")
        if i and f.t <= frames[i - 1].t:
            raise InputError(f"frame timestamps not strictly increasing at frame {i}")

    c = cfg.contrast_threshold
    logs = [np.log(f.luma() + cfg.log_eps).ravel() for f in frames]
    ref = logs[0].copy()
    parts = []
    for i in range(1, len(frames)):
        t0, t1 = frames[i - 1].t, frames[i].t
        l0, l1 = logs[i - 1], logs[i]
        for sign in (1, -1):
            n = np.floor(sign * (l1 - ref) / c + 1e-9).astype(np.int64)
            n = np.maximum(n, 0)
            total = int(n.sum())
            if total == 0:
                continue
            pix = np.repeat(np.arange(h * w), n)
            starts = np.repeat(np.cumsum(n) - n, n)
            k = np.arange(total) - starts + 1
            level = ref[pix] + sign * k * c
            slope = l1[pix] - l0[pix]
            frac = np.divide(level - l0[pix], slope, out=np.ones(total), where=slope != 0)
            tt = np.rint(t0 + np.clip(frac, 0.0, 1.0) * (t1 - t0)).astype(np.int64)
            tt = np.clip(tt, t0 + 1, t1)
            parts.append((tt, pix, np.full(total, sign, dtype=np.int64)))
            ref = ref + sign * n * c

    if not parts:
        return EventStream.empty(w, h)
    t = np.concatenate([a[0] for a in parts])
    pix = np.concatenate([a[1] for a in parts])
    p = np.concatenate([a[2] for a in parts])
    seq = np.arange(len(t))
    order = np.lexsort((seq, pix, t))
    t, pix, p = t[order], pix[order], p[order]
    if cfg.refractory_us > 0:
        keep = _refractory_mask(t, pix, cfg.refractory_us)
        t, pix, p = t[keep], pix[keep], p[keep]
    return EventStream(w, h, t, pix % w, pix // w, p)


def _refractory_mask(t: np.ndarray, pix: np.ndarray, period: int) -> np.ndarray:
    # Drops output only; the reference level already advanced through every crossing.
    keep = np.ones(len(t), dtype=bool)
    by_pixel = np.argsort(pix, kind="stable")
    last_pix, last_t = -1, 0
    for i in by_pixel:
        if pix[i] == last_pix and t[i] - last_t < period:
            keep[i] = False
            continue
        last_pix, last_t = pix[i], t[i]
    return keep


def build_voxel_grid(ev: EventStream, t_a: int, t_b: int, bins: int = 5) -> VoxelGrid:
    """Accumulate polarities into ``bins`` temporal slices with linear weights in time.

    Events in the closed window ``[t_a, t_b]`` contribute; the rest are ignored.
    """
    if bins < 1:
        raise InputError("voxel grid needs at least one bin")
    if not t_a < t_b:
        raise InputError(f"empty voxel window [{t_a}, {t_b}]")
    h, w = ev.height, ev.width
    sub = ev.window(t_a, t_b, closed_left=True)
    if len(sub) == 0:
        return VoxelGrid(t_a, t_b, np.zeros((bins, h, w)))
    tn = (sub.t - t_a) / (t_b - t_a) * (bins - 1)
    lo = np.floor(tn).astype(np.int64)
    frac = tn - lo
    p = sub.p.astype(np.float64)
    pix = sub.y * w + sub.x
    idx = np.stack([lo * h * w + pix, (lo + 1) * h * w + pix], axis=1)
    wts = np.stack([p * (1.0 - frac), p * frac], axis=1)
    valid = np.stack([np.ones_like(lo, dtype=bool), lo + 1 < bins], axis=1)
    acc = np.bincount(idx[valid], weights=wts[valid], minlength=bins * h * w)
    return VoxelGrid(t_a, t_b, acc.reshape(bins, h, w))


def event_integral(ev: EventStream, t_a: int, t_b: int, c: float) -> np.ndarray:
    """Per-pixel ``c * sum(p)`` over events with ``t_a < t <= t_b``."""
    if t_b < t_a:
        raise InputError(f"integration window reversed: {t_a} > {t_b}")
    sub = ev.window(t_a, t_b)
    counts = np.bincount(sub.y * ev.width + sub.x, weights=sub.p.astype(np.float64),
                         minlength=ev.width * ev.height)
    return c * counts.reshape(ev.height, ev.width)


def synthesize_pseudo_frame(I0: Frame, ev: EventStream, t: int, c: float,
                            eps: float = 1e-3) -> Frame:
    """Brighten/darken ``I0`` by the log change the events report up to ``t``."""
    if t < I0.t:
        raise InputError(f"pseudo-frame time {t} precedes keyframe time {I0.t}")
    if (ev.height, ev.width) != I0.shape:
        raise InputError("event stream and frame geometry differ")
    delta = event_integral(ev, I0.t, t, c)
    out = np.exp(np.log(I0.data + eps) + delta[None]) - eps
    out = np.where(delta[None] == 0, I0.data, out)
    return Frame(np.clip(out, 0.0, 1.0), t)
