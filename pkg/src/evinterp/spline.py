"""Per-pixel cubic-convolution motion splines.

A :class:`SplineField` holds ``K`` control points for horizontal displacement,
vertical displacement and warping priority at uniformly spaced normalized
times ``k / (K - 1)``.  Samples are taken with Keys' cubic convolution kernel
(``a = -0.5``) and quadratic ghost-point extrapolation at both ends, so the
interpolant reproduces polynomials up to degree two.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import solveh_banded

from .errors import InputError, NumericalError

KEYS_A = -0.5
DEFAULT_DAMPING = 1e-6
SPL_MAGIC = b"SPL1"

# A dense 2 x H x W displacement field in pixels (channel 0 = x, channel 1 = y).
FlowField = np.ndarray


def keys_kernel(s):
    """Keys cubic convolution kernel with ``a = -0.5``; accepts scalars or arrays."""
    a = KEYS_A
    s = np.abs(np.asarray(s, dtype=np.float64))
    near = ((a + 2) * s - (a + 3)) * s * s + 1
    far = ((a * s - 5 * a) * s + 8 * a) * s - 4 * a
    out = np.where(s < 1, near, np.where(s < 2, far, 0.0))
    return out if out.ndim else float(out)


@dataclass(frozen=True, eq=False)
class SplineField:
    """Control points as a ``K x 3 x H x W`` tensor (dx, dy, priority)."""

    data: np.ndarray

    def __post_init__(self):
        d = np.array(self.data, dtype=np.float64)
        if d.ndim != 4 or d.shape[1] != 3:
            raise InputError(f"spline data must be K x 3 x H x W, got {d.shape}")
        if d.shape[0] < 2:
            raise InputError("a spline needs at least two control points")
        if not np.all(np.isfinite(d)):
            raise InputError("spline control points must be finite")
        if np.any(d[0, :2] != 0):
            raise InputError("displacement control points at k=0 must be zero")
        d.flags.writeable = False
        object.__setattr__(self, "data", d)

    @property
    def K(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[2]

    @property
    def width(self) -> int:
        return self.data.shape[3]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.data.shape[2:]

    @property
    def control_times(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.K)


@dataclass(frozen=True, eq=False)
class FlowSample:
    t: float
    flow: FlowField
    priority: np.ndarray


def _check_t(t: float) -> float:
    t = float(t)
    if not 0.0 <= t <= 1.0:
        raise InputError(f"normalized time {t} outside [0, 1]")
    return t


def _ghost_rows(K: int) -> Tuple[dict, dict]:
    # Ghost point p[-1] and p[K] as linear combinations of real control points.
    if K == 2:
        return {0: 2.0, 1: -1.0}, {1: 2.0, 0: -1.0}
    return {0: 3.0, 1: -3.0, 2: 1.0}, {K - 1: 3.0, K - 2: -3.0, K - 3: 1.0}


def jacobian_weights(K: int, t: float) -> np.ndarray:
    """Weights ``w`` with ``sample(t) = sum_k w[k] * p[k]`` for ``K`` control points."""
    t = _check_t(t)
    s = t * (K - 1)
    r = round(s)
    if abs(s - r) < 1e-12:
        s = float(r)
    w = np.zeros(K)
    first, last = _ghost_rows(K)
    base = int(np.floor(s))
    for k in range(base - 1, base + 3):
        if k < -1 or k > K:
            continue
        wk = keys_kernel(s - k)
        if wk == 0.0:
            continue
        if k == -1:
            for j, c in first.items():
                w[j] += c * wk
        elif k == K:
            for j, c in last.items():
                w[j] += c * wk
        else:
            w[k] += wk
    return w


def sample_spline_jacobian(S: SplineField, t: float) -> np.ndarray:
    return jacobian_weights(S.K, t)


def sample_spline(S: SplineField, t: float) -> FlowSample:
    """Flow and priority at normalized time ``t``.

    Touches at most four control points per pixel; the cost does not depend
    on how many times the field has been sampled before.
    """
    w = jacobian_weights(S.K, t)
    nz = np.flatnonzero(w)
    planes = np.tensordot(w[nz], S.data[nz], axes=1)
    return FlowSample(float(t), planes[:2], planes[2])


def linear_flow(F01: FlowField, t: float) -> FlowField:
    _check_t(t)
    return t * np.asarray(F01, dtype=np.float64)


def _banded_upper(A: np.ndarray) -> np.ndarray:
    n = A.shape[0]
    nz = np.argwhere(A != 0)
    u = int(np.max(np.abs(nz[:, 0] - nz[:, 1]))) if len(nz) else 0
    ab = np.zeros((u + 1, n))
    for d in range(u + 1):
        ab[u - d, d:] = np.diagonal(A, d)
    return ab


def _damped_solve(A: np.ndarray, B: np.ndarray, lam: float, what: str) -> np.ndarray:
    N = A.T @ A
    eig = np.linalg.eigvalsh(N)
    if eig[0] <= lam:
        raise NumericalError(f"{what} fit is rank deficient (smallest eigenvalue {eig[0]:.3g})")
    ab = _banded_upper(N + lam * np.eye(N.shape[0]))
    rhs = A.T @ B
    x = solveh_banded(ab, rhs)
    # One iterated-Tikhonov step: bias drops from lam/eig to (lam/eig)**2.
    return x + solveh_banded(ab, rhs - N @ x)


def fit_spline(samples: Sequence[Tuple[float, FlowField, Optional[np.ndarray]]], K: int = 4,
               damping: float = DEFAULT_DAMPING) -> SplineField:
    """Least-squares spline through ``(t, flow, priority)`` samples.

    Displacement control points at ``k = 0`` are pinned to zero; the remaining
    ones and all priority control points are solved per pixel from the damped
    normal equations, which share a single banded matrix across the image.
    Priority is fitted only when every sample provides one, otherwise it is zero.
    """
    if K < 2:
        raise InputError("K must be at least 2")
    if len(samples) < K:
        raise InputError(f"need at least K={K} samples, got {len(samples)}")
    ts = np.array([_check_t(s[0]) for s in samples])
    flows = [np.asarray(s[1], dtype=np.float64) for s in samples]
    shape = flows[0].shape
    if len(shape) != 3 or shape[0] != 2:
        raise InputError(f"flow samples must be 2 x H x W, got {shape}")
    if any(f.shape != shape for f in flows):
        raise InputError("flow samples differ in geometry")
    _, h, w = shape
    A = np.stack([jacobian_weights(K, t) for t in ts])
    B = np.stack([f.reshape(-1) for f in flows])
    out = np.zeros((K, 3, h, w))
    disp = _damped_solve(A[:, 1:], B, damping, "displacement")
    out[1:, :2] = disp.reshape(K - 1, 2, h, w)

    prios = [s[2] for s in samples]
    if all(p is not None for p in prios):
        P = np.stack([np.asarray(p, dtype=np.float64).reshape(-1) for p in prios])
        if P.shape[1] != h * w:
            raise InputError("priority samples differ in geometry")
        out[:, 2] = _damped_solve(A, P, damping, "priority").reshape(K, h, w)
    return SplineField(out)


def save_spline(S: SplineField, path) -> None:
    """Write the ``SPL1`` format: magic, u32 width/height/K, K*3 f32 planes."""
    with open(path, "wb") as f:
        f.write(SPL_MAGIC)
        f.write(struct.pack("<III", S.width, S.height, S.K))
        f.write(S.data.astype("<f4").tobytes())


def load_spline(path) -> SplineField:
    raw = Path(path).read_bytes()
    if raw[:4] != SPL_MAGIC:
        raise InputError(f"{path}: not an SPL1 file")
    if len(raw) < 16:
        raise InputError(f"{path}: truncated header")
    w, h, K = struct.unpack("<III", raw[4:16])
    expect = 16 + K * 3 * h * w * 4
    if len(raw) != expect:
        raise InputError(f"{path}: expected {expect} bytes, found {len(raw)}")
    data = np.frombuffer(raw, dtype="<f4", offset=16).astype(np.float64)
    return SplineField(data.reshape(K, 3, h, w))
