"""Spatial registration of an event stream against its frames."""

from __future__ import annotations

from typing import Tuple

import numpy as np

from .errors import InputError
from .events import EventStream, Frame, event_integral


def _zncc(a: np.ndarray, b: np.ndarray) -> float:
    a = a - a.mean()
    b = b - b.mean()
    den = np.sqrt(np.sum(a * a) * np.sum(b * b))
    if den == 0.0:
        return -np.inf
    return float(np.sum(a * b) / den)


def _overlap(dx: int, dy: int, h: int, w: int):
    """Slices so that ``ev[ev_sl]`` at pixel q + (dx, dy) pairs with ``img[img_sl]`` at q."""
    def axis(d, n):
        return slice(max(d, 0), n + min(d, 0)), slice(max(-d, 0), n - max(d, 0))
    ex, ix = axis(dx, w)
    ey, iy = axis(dy, h)
    return (ey, ex), (iy, ix)


def align_streams(ev: EventStream, I0: Frame, I1: Frame, radius: int = 8) -> Tuple[int, int]:
    """Integer offset of the events relative to the frames.

    Events recorded at ``q + (dx, dy)`` for scene content at frame pixel ``q``
    yield ``(dx, dy)``; ``ev.shifted(-dx, -dy)`` registers them.  Every shift
    in the search square is scored by the zero-normalized cross-correlation of
    ``|event integral|`` against ``|luma(I1) - luma(I0)|`` over the overlap;
    ties prefer the shortest shift, then the lexicographically smallest.
    """
    if radius < 0:
        raise InputError(f"search radius must be non-negative, got {radius}")
    if I0.shape != I1.shape or (ev.height, ev.width) != I0.shape:
        raise InputError("events and frames must share geometry")
    win = ev.window(I0.t, I1.t)
    if len(win) == 0:
        raise InputError(f"no events in ({I0.t}, {I1.t}]")
    A = np.abs(event_integral(win, I0.t, I1.t, 1.0))
    B = np.abs(I1.luma() - I0.luma())
    if np.ptp(A) == 0.0 or np.ptp(B) == 0.0:
        raise InputError("alignment is undefined for zero-variance event or image difference maps")
    h, w = I0.shape
    r = min(radius, h - 1, w - 1)
    cands = [(dx, dy) for dx in range(-r, r + 1) for dy in range(-r, r + 1)]
    cands.sort(key=lambda s: (s[0] ** 2 + s[1] ** 2, s[0], s[1]))
    best, best_score = None, -np.inf
    for dx, dy in cands:
        ev_sl, img_sl = _overlap(dx, dy, h, w)
        score = _zncc(A[ev_sl], B[img_sl])
        if score > best_score:
            best, best_score = (dx, dy), score
    if best is None:
        raise InputError("alignment score undefined at every candidate shift")
    return best
