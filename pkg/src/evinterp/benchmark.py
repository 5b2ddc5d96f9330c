"""CPU-time comparison of motion models across upsampling factors."""

from __future__ import annotations

import csv
import platform
import time
from dataclasses import dataclass, replace
from typing import List, Sequence

import numpy as np

from .pipeline import METHODS, Dataset, InterpolationOptions, interpolate_gap


@dataclass(frozen=True)
class BenchmarkRow:
    method: str
    N: int
    total_ms: float

    @property
    def per_frame_ms(self) -> float:
        return self.total_ms / self.N


@dataclass
class BenchmarkReport:
    rows: List[BenchmarkRow]
    environment: str

    def per_frame(self, method: str, N: int) -> float:
        for r in self.rows:
            if r.method == method and r.N == N:
                return r.per_frame_ms
        raise KeyError((method, N))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            wr = csv.writer(f)
            wr.writerow(["method", "N", "total_ms", "per_frame_ms"])
            for r in self.rows:
                wr.writerow([r.method, r.N, f"{r.total_ms:.3f}", f"{r.per_frame_ms:.3f}"])

    def table(self) -> str:
        Ns = sorted({r.N for r in self.rows})
        methods = list(dict.fromkeys(r.method for r in self.rows))
        head = f"{'per-frame ms':<14}" + "".join(f"{'N=' + str(n):>10}" for n in Ns)
        lines = [head, "-" * len(head)]
        for m in methods:
            lines.append(f"{m:<14}" + "".join(f"{self.per_frame(m, n):>10.1f}" for n in Ns))
        lines.append(f"environment: {self.environment}")
        return "\n".join(lines)


def environment_note() -> str:
    return (f"{platform.python_implementation()} {platform.python_version()}, numpy {np.__version__}, "
            f"{platform.machine()}")


def benchmark_timing(ds: Dataset, Ns: Sequence[int] = (1, 3, 10, 20), methods: Sequence[str] = METHODS,
                     repeats: int = 5, warmup: int = 1,
                     opts: InterpolationOptions = InterpolationOptions()) -> BenchmarkReport:
    """Median CPU time to produce ``N`` frames for the first keyframe gap.

    The timed unit is the whole gap: motion estimation, sampling, warping and
    fusion.  The spline model estimates once per gap; the non-parametric model
    solves for flow at every inserted frame.  Process CPU time is used so that
    time spent descheduled on a shared machine does not count.
    """
    I0, I1 = ds.frames[0], ds.frames[1]
    events = ds.aligned_events()
    cells = [(m, N) for m in methods for N in Ns]
    cell_opts = {c: replace(opts, method=c[0], N=c[1], skip=0) for c in cells}
    for _ in range(warmup):
        for c in cells:
            interpolate_gap(I0, I1, events, cell_opts[c])
    # Repeats sweep all cells in turn so slow drift in machine load is shared by every cell.
    runs = {c: [] for c in cells}
    for _ in range(max(repeats, 1)):
        for c in cells:
            t0 = time.process_time()
            interpolate_gap(I0, I1, events, cell_opts[c])
            runs[c].append((time.process_time() - t0) * 1e3)
    rows = [BenchmarkRow(m, N, float(np.median(runs[(m, N)]))) for m, N in cells]
    return BenchmarkReport(rows, environment_note())
