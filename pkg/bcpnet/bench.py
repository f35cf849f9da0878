"""
Forward-pass latency harness.

For every resolution: one random input, ``warmup`` discarded passes, then
``iters`` timed passes around :func:`~bcpnet.graph.forward` only. The headline
statistic is the median; ``fps = 1000 / median_ms``. Results are sorted by
pixel count and the median column is checked for monotonicity, which is
reported rather than enforced.

Only one benchmark may run per process at a time.

Example::

    from bcpnet.bench import run_bench
    from bcpnet.graph import build_bcpnet, init_weights

    g = build_bcpnet()
    report = run_bench(g, init_weights(g), [(128, 256), (256, 512)], warmup=2, iters=10)
    print(report.to_csv())
"""

from __future__ import annotations

import csv
import io
import logging
import statistics
import threading
import time
from typing import Callable, Iterator, List, Mapping, Optional, Sequence, Tuple

import msgspec
import numpy as np

from .complexity import count_macs, count_params
from .exceptions import BenchmarkBusyError, UsageError
from .graph import ModelGraph, forward
from .tensor import Tensor4

logger = logging.getLogger("bcpnet.bench")

Resolution = Tuple[int, int]

# Published GPU latency (ms) per input resolution; display only.
PUBLISHED_MS = {
    (360, 640): 1.7,
    (512, 1024): 4.0,
    (720, 960): 5.5,
    (720, 1280): 7.4,
    (768, 1536): 9.8,
    (1080, 1920): 18.2,
    (1024, 1024): 8.6,
    (1024, 2048): 18.2,
}
BENCH_RESOLUTIONS: List[Resolution] = list(PUBLISHED_MS)

_BENCH_LOCK = threading.Lock()


class BenchResult(msgspec.Struct, frozen=True):
    resolution: Resolution
    warmup_iters: int
    timed_iters: int
    times_ms: Tuple[float, ...]
    median_ms: float
    fps: float
    params: int
    macs: int

    @property
    def pixels(self) -> int:
        return self.resolution[0] * self.resolution[1]

    @property
    def p95_ms(self) -> float:
        return float(np.percentile(self.times_ms, 95))


class BenchReport(msgspec.Struct, frozen=True):
    results: Tuple[BenchResult, ...]
    monotonic: bool

    def __iter__(self) -> Iterator[BenchResult]:
        return iter(self.results)

    def __len__(self) -> int:
        return len(self.results)

    def __getitem__(self, idx: int) -> BenchResult:
        return self.results[idx]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["h", "w", "params", "macs", "median_ms", "fps"])
        for r in self.results:
            writer.writerow([*r.resolution, r.params, r.macs, f"{r.median_ms:.4f}", f"{r.fps:.4f}"])
        return buf.getvalue()

    def format_table(self) -> str:
        header = f"{'resolution':>12} {'median ms':>10} {'p95 ms':>10} {'fps':>10} {'GMACs':>8} {'published ms':>13}"
        lines = [header, "-" * len(header)]
        for r in self.results:
            ref = PUBLISHED_MS.get(r.resolution)
            res = f"{r.resolution[0]}x{r.resolution[1]}"
            ref_text = "-" if ref is None else f"{ref:.1f}"
            lines.append(f"{res:>12} {r.median_ms:>10.2f} {r.p95_ms:>10.2f} {r.fps:>10.2f} {r.macs / 1e9:>8.2f} {ref_text:>13}")
        if not self.monotonic:
            lines.append("warning: median latency is not monotonic in pixel count")
        return "\n".join(lines)


def is_monotonic(results: Sequence[BenchResult]) -> bool:
    return all(a.median_ms <= b.median_ms for a, b in zip(results, results[1:]))


def time_forward(
    g: ModelGraph,
    weights: Mapping[str, Tensor4],
    x: Tensor4,
    warmup: int,
    iters: int,
    timer: Callable[[], float] = time.perf_counter,
) -> List[float]:
    for _ in range(warmup):
        forward(g, weights, x)
    times = []
    for _ in range(iters):
        start = timer()
        forward(g, weights, x)
        times.append((timer() - start) * 1000.0)
    return times


def run_bench(
    g: ModelGraph,
    weights: Mapping[str, Tensor4],
    resolutions: Optional[Sequence[Resolution]] = None,
    warmup: int = 10,
    iters: int = 50,
    seed: int = 0,
    timer: Callable[[], float] = time.perf_counter,
) -> BenchReport:
    if warmup < 1 or iters < 10:
        raise UsageError(f"need warmup >= 1 and iters >= 10, got warmup={warmup} iters={iters}")
    resolutions = list(resolutions or BENCH_RESOLUTIONS)
    if not _BENCH_LOCK.acquire(blocking=False):
        raise BenchmarkBusyError()
    try:
        params = count_params(g).total
        rng = np.random.default_rng(seed)
        results = []
        for h, w in sorted(resolutions, key=lambda r: (r[0] * r[1], r)):
            x = Tensor4(rng.random((1, 3, h, w)).astype(g.dtype))
            times = time_forward(g, weights, x, warmup, iters, timer)
            median = statistics.median(times)
            result = BenchResult(
                resolution=(h, w),
                warmup_iters=warmup,
                timed_iters=iters,
                times_ms=tuple(times),
                median_ms=median,
                fps=1000.0 / median if median > 0 else float("inf"),
                params=params,
                macs=count_macs(g, h, w).macs,
            )
            logger.info("bench %dx%d: median %.3f ms (%.1f fps)", h, w, median, result.fps)
            results.append(result)
    finally:
        _BENCH_LOCK.release()
    monotonic = is_monotonic(results)
    if not monotonic:
        logger.warning("median latency is not monotonic in pixel count")
    return BenchReport(results=tuple(results), monotonic=monotonic)


__all__ = [
    "PUBLISHED_MS",
    "BENCH_RESOLUTIONS",
    "BenchReport",
    "BenchResult",
    "is_monotonic",
    "run_bench",
    "time_forward",
]
