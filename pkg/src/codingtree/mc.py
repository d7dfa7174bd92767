"""Monte Carlo driver: deterministic seeding, streaming statistics, parallel blocks.

Samples are grouped into fixed-size blocks.  Each block is accumulated
sequentially with streaming mean/M2 updates, and block statistics are then merged
pairwise in a fixed binary-tree order over block indices.  Neither the
grouping nor the merge order depends on the number of workers, so every
reported number is bit-identical for any `threads` value.

Workers are processes, not threads: the sampler is pure Python and would
serialize on the interpreter lock otherwise.
"""

from __future__ import annotations

import math
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

from .codes import IDENTITY, Code
from .rng import block_streams

BLOCK_SIZE = 4096


class SampleFailure(RuntimeError):
    """Raised when a sample fails and the run is in strict mode."""


@dataclass
class RunStatistics:
    count: int = 0
    failed: int = 0
    mean: float = 0.0
    m2: float = 0.0
    min: float = math.inf
    max: float = -math.inf
    total_nodes: int = 0
    first_failure: str | None = None

    def push(self, value: float, nodes: int = 0) -> None:
        self.count += 1
        self.total_nodes += nodes
        delta = value - self.mean
        self.mean += delta / self.count
        self.m2 += delta * (value - self.mean)
        if value < self.min:
            self.min = value
        if value > self.max:
            self.max = value

    def push_failure(self, reason: str, nodes: int = 0) -> None:
        self.failed += 1
        self.total_nodes += nodes
        if self.first_failure is None:
            self.first_failure = reason

    @classmethod
    def from_values(cls, values) -> "RunStatistics":
        s = cls()
        for v in values:
            s.push(float(v))
        return s

    @property
    def variance(self) -> float:
        return self.m2 / (self.count - 1) if self.count > 1 else math.nan

    @property
    def std(self) -> float:
        return math.sqrt(self.variance)

    @property
    def std_error(self) -> float:
        return math.sqrt(self.variance / self.count) if self.count > 1 else math.nan

    def as_dict(self) -> dict:
        return {
            "count": self.count,
            "failed": self.failed,
            "mean": self.mean,
            "std_error": self.std_error,
            "variance": self.variance,
            "min": self.min,
            "max": self.max,
            "total_nodes": self.total_nodes,
        }


def merge(a: RunStatistics, b: RunStatistics) -> RunStatistics:
    """Pairwise combination of two partial statistics; the empty one is the identity."""
    failure = a.first_failure if a.first_failure is not None else b.first_failure
    if b.count == 0:
        return replace(a, failed=a.failed + b.failed, total_nodes=a.total_nodes + b.total_nodes,
                       first_failure=failure)
    if a.count == 0:
        return replace(b, failed=a.failed + b.failed, total_nodes=a.total_nodes + b.total_nodes,
                       first_failure=failure)
    n = a.count + b.count
    delta = b.mean - a.mean
    mean = a.mean + delta * (b.count / n)
    m2 = a.m2 + b.m2 + delta * delta * (a.count * b.count / n)
    return RunStatistics(
        count=n,
        failed=a.failed + b.failed,
        mean=mean,
        m2=m2,
        min=min(a.min, b.min),
        max=max(a.max, b.max),
        total_nodes=a.total_nodes + b.total_nodes,
        first_failure=failure,
    )


def merge_tree(parts: Sequence[RunStatistics]) -> RunStatistics:
    """Pairwise merge in a fixed balanced-tree order."""
    if not parts:
        return RunStatistics()
    level = list(parts)
    while len(level) > 1:
        nxt = [merge(level[i], level[i + 1]) for i in range(0, len(level) - 1, 2)]
        if len(level) % 2:
            nxt.append(level[-1])
        level = nxt
    return level[0]


@dataclass
class RunConfig:
    """One estimator run over a list of (t, x) evaluation points.

    `spec` is a tree.ProblemSpec (x is a real) or a dsem.DDProblemSpec
    (x is a length-d sequence, or a real meaning that value in every
    coordinate).
    """

    spec: object
    eval_points: list = field(default_factory=lambda: [(0.0, 0.0)])
    samples: int = 10**5
    seed: int = 0
    threads: int = 1
    runs: int = 5
    strict_failures: bool = True
    code: Code = IDENTITY
    block_size: int = BLOCK_SIZE

    def __post_init__(self):
        if self.samples < 1:
            raise ValueError("samples must be >= 1")
        if self.runs < 1:
            raise ValueError("runs must be >= 1")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")
        if self.block_size < 1:
            raise ValueError("block_size must be >= 1")
        if not self.eval_points:
            raise ValueError("need at least one evaluation point")


def _sampler(spec):
    # imported lazily so that mc does not depend on dsem at import time
    from .tree import ProblemSpec, sample_H

    if isinstance(spec, ProblemSpec):
        return sample_H
    from .dsem import DDProblemSpec, dd_sample_H

    if isinstance(spec, DDProblemSpec):
        return dd_sample_H
    raise TypeError(f"unsupported spec type {type(spec).__name__}")


def _run_block(spec, code, t, x, seed, point, run, start, count, strict):
    sample = _sampler(spec)
    stats = RunStatistics()
    for i, rng in enumerate(block_streams(seed, point, start, count, run)):
        out = sample(spec, t, x, code, rng)
        if out.failed:
            reason = f"sample {start + i} at point #{point} (t={t}, x={x}): {out.failure}"
            stats.push_failure(reason, out.nodes)
            if strict:
                break
        else:
            stats.push(out.value, out.nodes)
    return stats


def _jobs(config: RunConfig, run: int):
    for p, (t, x) in enumerate(config.eval_points):
        for start in range(0, config.samples, config.block_size):
            count = min(config.block_size, config.samples - start)
            yield p, (config.spec, config.code, t, x, config.seed, p, run, start, count,
                      config.strict_failures)


def run_estimate(config: RunConfig, run: int = 0, executor=None) -> list[RunStatistics]:
    """Per-point statistics of ℋ over config.samples samples for repetition `run`."""
    jobs = list(_jobs(config, run))
    if executor is not None:
        futures = [executor.submit(_run_block, *args) for _, args in jobs]
        results = [f.result() for f in futures]
    elif config.threads > 1:
        with ProcessPoolExecutor(max_workers=config.threads) as pool:
            futures = [pool.submit(_run_block, *args) for _, args in jobs]
            results = [f.result() for f in futures]
    else:
        results = []
        for _, args in jobs:
            results.append(_run_block(*args))
            if config.strict_failures and results[-1].failed:
                break
    per_point: list[list[RunStatistics]] = [[] for _ in config.eval_points]
    for (p, _), stats in zip(jobs, results):
        per_point[p].append(stats)
    out = [merge_tree(parts) for parts in per_point]
    if config.strict_failures:
        for stats in out:
            if stats.failed:
                raise SampleFailure(
                    f"{stats.failed} failed sample(s); first: {stats.first_failure}. "
                    "Rerun with strict_failures=False to exclude failed samples "
                    "(this biases the estimate)."
                )
    return out


def run_repeated(config: RunConfig) -> list[list[RunStatistics]]:
    """config.runs independent repetitions; result[r][p] is run r at point p."""
    if config.threads > 1:
        with ProcessPoolExecutor(max_workers=config.threads) as pool:
            return [run_estimate(config, r, executor=pool) for r in range(config.runs)]
    return [run_estimate(config, r) for r in range(config.runs)]


@dataclass(frozen=True)
class ErrorReport:
    mean: float
    sd: float
    mean_rel_L1: float
    sd_rel_L1: float
    absolute: bool  # True when exact == 0 and errors are absolute

    def as_dict(self) -> dict:
        return {
            "mean": self.mean,
            "sd": self.sd,
            "mean_rel_L1": self.mean_rel_L1,
            "sd_rel_L1": self.sd_rel_L1,
            "absolute": self.absolute,
        }


def error_report(estimates: Sequence[float], exact: float) -> ErrorReport:
    """Mean/SD of the estimates and of their relative L1 errors across runs.

    SDs use the n-1 denominator and are NaN for a single run.  With
    exact == 0 the errors are absolute and the report is flagged.
    """
    est = [float(e) for e in estimates]
    if not est:
        raise ValueError("no estimates")
    absolute = exact == 0
    scale = 1.0 if absolute else abs(exact)
    errs = [abs(e - exact) / scale for e in est]
    sd = statistics.stdev(est) if len(est) > 1 else math.nan
    sd_err = statistics.stdev(errs) if len(errs) > 1 else math.nan
    return ErrorReport(statistics.fmean(est), sd, statistics.fmean(errs), sd_err, absolute)
