import math
import random
from collections import Counter

import pytest

from codingtree import expr as ex
from codingtree.codes import (
    IDENTITY, BranchOutcome, Deriv, FDeriv, Verdict, check_bounds, dump_mechanism, f_star,
    mechanism, parse_code, reachable_codes, sample_branch, terminal_value,
)
from codingtree.fdb import enumerate_fdb
from codingtree.rng import SampleStream


def test_identity_mechanism():
    table = mechanism(IDENTITY, 2)
    assert table.outcomes == (BranchOutcome(1.0, (FDeriv((0, 0, 0)),)),)
    assert table.atom_count == 1


def test_semilinear_mechanism_golden():
    # n = 0: {(+1, [f*, f'*]), (-1/2, [∂x, ∂x, f''*])}, each with probability 1/2
    for k in range(4):
        table = mechanism(FDeriv((k,)), 0)
        assert table.outcomes == (
            BranchOutcome(1.0, (FDeriv((0,)), FDeriv((k + 1,)))),
            BranchOutcome(-0.5, (Deriv(1), Deriv(1), FDeriv((k + 2,)))),
        )
        assert table.probability == 0.5


@pytest.mark.parametrize("n, atoms", [(0, 2), (1, 7), (2, 22), (3, 75), (4, 306)])
def test_fderiv_atom_count(n, atoms):
    formula = 1 + (n + 1) ** 2 + sum(len(enumerate_fdb(n + 1, k)) for k in range(1, n + 1))
    assert formula == atoms
    assert mechanism(f_star(n), n).atom_count == atoms


def test_n1_outcomes_listed():
    out = mechanism(FDeriv((0, 0)), 1).outcomes
    assert out[0] == BranchOutcome(1.0, (FDeriv((0, 0)), FDeriv((1, 0))))
    hess = [o for o in out if o.weight == -0.5]
    assert [o.children[:2] for o in hess] == [
        (Deriv(1), Deriv(1)), (Deriv(1), Deriv(2)), (Deriv(2), Deriv(1)), (Deriv(2), Deriv(2))
    ]
    assert hess[1].children[2] == hess[2].children[2] == FDeriv((1, 1))
    fdb_family = out[5:]
    assert fdb_family == (
        BranchOutcome(1.0, (FDeriv((0, 1)), FDeriv((0, 1)), Deriv(2))),
        BranchOutcome(1.0, (FDeriv((1, 0)), FDeriv((0, 1)), Deriv(1))),
    )


@pytest.mark.parametrize("n", range(4))
@pytest.mark.parametrize("k", range(1, 5))
def test_deriv_mechanism_shape(n, k):
    table = mechanism(Deriv(k), n)
    terms = enumerate_fdb(n + 1, k)
    assert table.atom_count == len(terms)
    for o, t in zip(table.outcomes, terms):
        assert o.weight == float(t.coefficient)
        assert o.children[0] == FDeriv(t.lam)
        orders = [c.k for c in o.children[1:]]
        assert orders == t.derivative_factors()
        assert all(1 <= q <= n + k for q in orders)


@pytest.mark.parametrize("n", range(4))
def test_fderiv_children_bounds(n):
    lam = tuple(range(n + 1))
    for o in mechanism(FDeriv(lam), n).outcomes:
        assert o.weight != 0
        for c in o.children:
            if isinstance(c, FDeriv):
                assert sum(c.lam) <= sum(lam) + 2


def test_weights_of_fderiv_families():
    n = 2
    out = mechanism(f_star(n), n).outcomes
    assert out[0].weight == 1.0
    assert all(o.weight == -0.5 for o in out[1:1 + (n + 1) ** 2])
    coeffs = [float(t.coefficient) for k in range(1, n + 1) for t in enumerate_fdb(n + 1, k)]
    assert [o.weight for o in out[1 + (n + 1) ** 2:]] == coeffs


def test_fderiv_length_checked():
    with pytest.raises(ValueError):
        mechanism(FDeriv((0, 0)), 2)


def test_memoized():
    assert mechanism(FDeriv((1, 0, 0)), 2) is mechanism(FDeriv((1, 0, 0)), 2)


def test_parse_code_round_trip():
    for c in (IDENTITY, Deriv(3), FDeriv((1, 0, 2))):
        assert parse_code(str(c)) == c
    with pytest.raises(ValueError):
        parse_code("G2")


def test_dump_mentions_every_atom():
    text = dump_mechanism(f_star(1), 1)
    assert len(text.splitlines()) == 1 + 7


# --- sampling -----------------------------------------------------------------

def test_sample_identity():
    rng = SampleStream.create(1, 0, 0)
    outcome, p = sample_branch(IDENTITY, 3, rng)
    assert p == 1.0 and outcome.children == (f_star(3),)
    assert rng.draws == 1


def test_sample_uniform_frequencies():
    counts = Counter()
    rng = SampleStream.create(2, 0, 0)
    N = 10**5
    for _ in range(N):
        outcome, p = sample_branch(FDeriv((0,)), 0, rng)
        counts[outcome.weight] += 1
    assert p == 0.5
    for w in (1.0, -0.5):
        assert abs(counts[w] / N - 0.5) < 0.01


def test_sample_deriv_probability():
    _, p = sample_branch(Deriv(1), 1, SampleStream.create(0, 0, 0))
    assert p == 0.5


# --- terminal values ----------------------------------------------------------

def test_terminal_examples():
    cosx = ex.parse("cos(x)", ["x"])
    f = ex.parse("z0 - z0^3", ["z0"])
    assert terminal_value(IDENTITY, 0.0, cosx, f, 0) == 1.0
    assert terminal_value(Deriv(1), 0.0, cosx, f, 0) == 0.0
    assert terminal_value(FDeriv((0,)), 2.0, ex.parse("x", ["x"]), f, 0) == -6.0


def test_terminal_non_finite_tagged():
    f = ex.parse("log(z0)", ["z0"])
    v = terminal_value(FDeriv((0,)), 0.0, ex.parse("x - 1", ["x"]), f, 0)
    assert isinstance(v, ex.NonFinite)


# --- Faà di Bruno bookkeeping and the code system -------------------------------

def _code_of(c, u, f, n):
    """c(u) as an expression in (t, x)."""
    if c == IDENTITY:
        return u
    if isinstance(c, Deriv):
        return ex.differentiate(u, "x", c.k)
    jet = {f"z{i}": ex.differentiate(u, "x", i) for i in range(n + 1)}
    return ex.substitute(ex.partial(f, ex.z_names(n), c.lam), jet)


@pytest.mark.parametrize("n", [0, 1, 2])
@pytest.mark.parametrize("k", [1, 2, 3, 4])
def test_deriv_weight_bookkeeping(n, k):
    rnd = random.Random(10 * n + k)
    names = ex.z_names(n)
    f = ex.parse(" + ".join(f"{rnd.uniform(-1, 1):.3f}*{a}^{rnd.randint(1, 3)}*{b}^{rnd.randint(0, 2)}"
                            for a, b in zip(names, reversed(names))) + " + z0^2", names)
    u = ex.parse(" + ".join(f"{rnd.uniform(-1, 1):.3f}*x^{p}" for p in range(8)), ["t", "x"])
    want = ex.differentiate(_code_of(f_star(n), u, f, n), "x", k)
    for _ in range(5):
        env = {"t": 0.0, "x": rnd.uniform(-1, 1)}
        total = 0.0
        for o in mechanism(Deriv(k), n).outcomes:
            prod = o.weight
            for c in o.children:
                prod *= ex.evaluate(_code_of(c, u, f, n), env)
            total += prod
        w = ex.evaluate(want, env)
        assert total == pytest.approx(w, rel=1e-8, abs=1e-10)


@pytest.mark.parametrize("f, exact, n", [
    ("z0 - z0^3", "-0.5 - 0.5*tanh(0.75*(0.3 - t) - x/2)", 0),
    ("10*z1 + z2/(1 + z0^2) - 2*z0 - z2/2", "tan(10*(0.01 - t) + x)", 2),
    ("2*z1 - z2/2 + log(z2^2 + z3^2)", "cos(2*(0.02 - t) + x)", 3),
])
def test_code_system_is_solved_by_exact_solution(f, exact, n):
    """(∂ₜ + ½∂ₓ²) c(u) + Σ weight · ∏ children(u) = 0 for every reachable code."""
    fe = ex.parse(f, ex.z_names(n))
    u = ex.parse(exact, ["t", "x"])
    codes = [IDENTITY, f_star(n), Deriv(1), Deriv(2)]
    codes += [FDeriv(tuple(1 if i == j else 0 for i in range(n + 1))) for j in range(n + 1)]
    for c in codes:
        cu = _code_of(c, u, fe, n)
        lhs = ex.add(ex.differentiate(cu, "t"), ex.mul(ex.Const(0.5), ex.differentiate(cu, "x", 2)))
        for x in (-0.3, 0.2):
            env = {"t": 0.005, "x": x}
            total = ex.evaluate(lhs, env)
            scale = abs(total)
            for o in mechanism(c, n).outcomes:
                prod = o.weight
                for child in o.children:
                    prod *= ex.evaluate(_code_of(child, u, fe, n), env)
                total += prod
                scale = max(scale, abs(prod))
            assert abs(total) <= 1e-9 * max(1.0, scale), (c, x)


# --- sufficient condition -------------------------------------------------------

def test_check_bounds_examples():
    assert check_bounds(0.5, 3.0, 0.1, 0, 4) is Verdict.HOLDS
    assert check_bounds(0.5, 1.0, 0.1, 0, 4) is Verdict.FAILS
    assert check_bounds(0.5, 3.0, 0.1, 2, 3) is Verdict.INCONCLUSIVE


def test_check_bounds_k_condition():
    # ρ(T) condition holds but K > F̄(T)
    assert check_bounds(0.9, 3.0, 0.1, 0, 4) is Verdict.FAILS


def test_check_bounds_validates():
    with pytest.raises(ValueError):
        check_bounds(1.5, 1.0, 0.1, 0, 4)


def test_semilinear_closure():
    codes, escaped = reachable_codes(0, 4)
    assert not escaped
    assert codes == {IDENTITY, FDeriv((0,)), Deriv(1)}
    assert min(1 / mechanism(c, 0).atom_count for c in codes) == 0.5
    assert math.isclose(3 * math.exp(-0.3), 2.2224546, rel_tol=1e-6)
