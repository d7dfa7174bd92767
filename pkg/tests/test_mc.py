import math
import random
import statistics

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from codingtree.mc import (
    RunConfig, RunStatistics, SampleFailure, error_report, merge, merge_tree, run_estimate,
    run_repeated,
)
from codingtree.tree import ProblemSpec

ALLEN_CAHN = ProblemSpec.from_text("z0 - z0^3", "-0.5 - 0.5*tanh(-x/2)", 0, 0.3)


def test_empty_is_identity():
    s = RunStatistics.from_values([1.0, 2.0, 4.0])
    for m in (merge(s, RunStatistics()), merge(RunStatistics(), s)):
        assert (m.count, m.mean, m.m2, m.min, m.max) == (s.count, s.mean, s.m2, s.min, s.max)


def test_merge_two_singletons():
    m = merge(RunStatistics.from_values([3.0]), RunStatistics.from_values([5.0]))
    assert m.count == 2 and m.mean == 4.0 and m.variance == 2.0


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=200), st.data())
def test_split_merge_matches_single_pass(values, data):
    cuts = sorted(data.draw(st.lists(st.integers(0, len(values)), max_size=6)))
    bounds = [0] + cuts + [len(values)]
    parts = [RunStatistics.from_values(values[a:b]) for a, b in zip(bounds, bounds[1:])]
    whole = merge_tree(parts)
    assert whole.count == len(values)
    assert whole.mean == pytest.approx(statistics.fmean(values), rel=1e-12, abs=1e-9)
    assert whole.variance == pytest.approx(statistics.variance(values), rel=1e-9, abs=1e-7)
    assert whole.min == min(values) and whole.max == max(values)


def test_failures_are_counted_not_averaged():
    a = RunStatistics.from_values([1.0])
    a.push_failure("boom")
    b = RunStatistics()
    b.push_failure("later")
    m = merge(a, b)
    assert m.count == 1 and m.failed == 2 and m.first_failure == "boom"


def test_config_validation():
    for bad in ({"samples": 0}, {"runs": 0}, {"threads": 0}, {"eval_points": []}):
        with pytest.raises(ValueError):
            RunConfig(ALLEN_CAHN, **bad)


def test_threads_do_not_change_results():
    base = dict(spec=ALLEN_CAHN, eval_points=[(0.0, 0.0), (0.0, 0.5)], samples=3000, seed=7,
                block_size=512)
    one = run_estimate(RunConfig(threads=1, **base))
    two = run_estimate(RunConfig(threads=2, **base))
    assert [(s.count, s.mean, s.m2) for s in one] == [(s.count, s.mean, s.m2) for s in two]


def test_block_size_does_not_change_samples():
    base = dict(spec=ALLEN_CAHN, samples=2000, seed=3)
    a = run_estimate(RunConfig(block_size=100, **base))[0]
    b = run_estimate(RunConfig(block_size=2000, **base))[0]
    assert a.count == b.count and a.min == b.min and a.max == b.max
    assert a.mean == pytest.approx(b.mean, rel=1e-13)


def test_runs_are_independent_and_reproducible():
    cfg = RunConfig(ALLEN_CAHN, samples=500, seed=1, runs=3)
    r1, r2 = run_repeated(cfg), run_repeated(cfg)
    means = [r[0].mean for r in r1]
    assert means == [r[0].mean for r in r2]
    assert len(set(means)) == 3


def test_standard_error_scales_with_samples():
    small = run_estimate(RunConfig(ALLEN_CAHN, samples=5000, seed=2))[0]
    large = run_estimate(RunConfig(ALLEN_CAHN, samples=20000, seed=2))[0]
    assert large.std_error / small.std_error == pytest.approx(0.5, rel=0.15)


def test_strict_failure_raises_with_diagnostic():
    spec = ProblemSpec.from_text("z0", "log(x)", 0, 1.0)
    with pytest.raises(SampleFailure, match="non-finite"):
        run_estimate(RunConfig(spec, samples=200))


def test_non_strict_excludes_failures():
    spec = ProblemSpec.from_text("z0", "log(x)", 0, 1.0)
    s = run_estimate(RunConfig(spec, samples=200, strict_failures=False))[0]
    assert s.failed > 0 and s.count + s.failed == 200


def test_error_report_relative():
    r = error_report([1.0, 1.2, 0.8], 1.0)
    assert r.mean == pytest.approx(1.0)
    assert r.sd == pytest.approx(0.2)
    assert r.mean_rel_L1 == pytest.approx(0.4 / 3)
    assert not r.absolute


def test_error_report_zero_exact_is_absolute():
    r = error_report([0.1, -0.1], 0.0)
    assert r.absolute and r.mean_rel_L1 == pytest.approx(0.1)


def test_error_report_single_run():
    r = error_report([2.0], 1.0)
    assert math.isnan(r.sd) and r.mean_rel_L1 == 1.0


def test_error_report_random_against_direct():
    rnd = random.Random(0)
    est = [rnd.gauss(3, 0.1) for _ in range(10)]
    r = error_report(est, 3.0)
    errs = [abs(e - 3) / 3 for e in est]
    assert r.sd_rel_L1 == pytest.approx(statistics.stdev(errs))
