"""Branch codes, the branching mechanism, and terminal evaluation of codes.

A code is one of

* ``Identity``: the solution u itself,
* ``Deriv(k)``: the spatial derivative ∂ₓᵏ u, k >= 1,
* ``FDeriv(lam)``: (∂_{z_0}^{lam_0} ... ∂_{z_n}^{lam_n} f) composed with the
  jet (u, ∂ₓu, ..., ∂ₓⁿu).

Scalar prefactors never live in a code; they are carried by the branch
weights, so codes stay hashable and memoizable.
"""

from __future__ import annotations

import enum
import functools
import math
import re
from dataclasses import dataclass
from typing import Callable, Union

from . import expr as ex
from .fdb import enumerate_fdb


@dataclass(frozen=True, slots=True)
class Identity:
    def __str__(self):
        return "Id"


@dataclass(frozen=True, slots=True)
class Deriv:
    k: int

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("Deriv order must be >= 1")

    def __str__(self):
        return f"D{self.k}"


@dataclass(frozen=True, slots=True)
class FDeriv:
    lam: tuple[int, ...]

    def __str__(self):
        return "F(" + ",".join(map(str, self.lam)) + ")"


Code = Union[Identity, Deriv, FDeriv]

IDENTITY = Identity()


def f_star(n: int) -> FDeriv:
    return FDeriv((0,) * (n + 1))


_CODE_RE = re.compile(r"^\s*(?:(Id)|D(\d+)|F\(([\d,\s]*)\))\s*$")


def parse_code(text: str) -> Code:
    """Parse 'Id', 'D3' or 'F(1,0,2)'."""
    m = _CODE_RE.match(text)
    if m is None:
        raise ValueError(f"bad code {text!r}; expected Id, D<k> or F(l0,...,ln)")
    if m.group(1):
        return IDENTITY
    if m.group(2):
        return Deriv(int(m.group(2)))
    return FDeriv(tuple(int(v) for v in m.group(3).split(",") if v.strip()))


@dataclass(frozen=True)
class BranchOutcome:
    weight: float
    children: tuple[Code, ...]


@dataclass(frozen=True)
class MechanismTable:
    outcomes: tuple[BranchOutcome, ...]

    @property
    def atom_count(self) -> int:
        return len(self.outcomes)

    @property
    def probability(self) -> float:
        return 1.0 / len(self.outcomes)


def _unit(n: int, *idx: int) -> tuple[int, ...]:
    v = [0] * (n + 1)
    for i in idx:
        v[i] += 1
    return tuple(v)


def _add(a: tuple[int, ...], b: tuple[int, ...]) -> tuple[int, ...]:
    return tuple(x + y for x, y in zip(a, b))


@functools.lru_cache(maxsize=None)
def mechanism(c: Code, n: int) -> MechanismTable:
    """Weighted child-code tuples created when a branch carrying `c` dies."""
    if isinstance(c, Identity):
        return MechanismTable((BranchOutcome(1.0, (f_star(n),)),))
    if isinstance(c, Deriv):
        return MechanismTable(tuple(_fdb_outcomes(n, c.k, prefix=())))
    if not isinstance(c, FDeriv):
        raise TypeError(f"not a code: {c!r}")
    lam = c.lam
    if len(lam) != n + 1:
        raise ValueError(f"FDeriv of length {len(lam)} does not match n={n}")
    outcomes = [BranchOutcome(1.0, (f_star(n), FDeriv(_add(lam, _unit(n, 0)))))]
    for j in range(n + 1):
        for l in range(n + 1):
            outcomes.append(
                BranchOutcome(
                    -0.5, (Deriv(j + 1), Deriv(l + 1), FDeriv(_add(lam, _unit(n, j, l))))
                )
            )
    for k in range(1, n + 1):
        outcomes.extend(_fdb_outcomes(n, k, prefix=(FDeriv(_add(lam, _unit(n, k))),)))
    return MechanismTable(tuple(outcomes))


def _fdb_outcomes(n: int, k: int, prefix: tuple[Code, ...]):
    for term in enumerate_fdb(n + 1, k):
        derivs = tuple(Deriv(order) for order in term.derivative_factors())
        # children: the f-derivative first, then the prefix code, then ∂ₓ codes
        yield BranchOutcome(term.weight, (FDeriv(term.lam),) + prefix + derivs)


def sample_branch(c: Code, n: int, rng) -> tuple[BranchOutcome, float]:
    """Uniform draw from mechanism(c, n) using exactly one uniform from `rng`."""
    table = mechanism(c, n)
    count = len(table.outcomes)
    idx = min(int(rng.uniform() * count), count - 1)
    return table.outcomes[idx], 1.0 / count


# ---------------------------------------------------------------------------
# terminal values


class TerminalEvaluator:
    """Evaluates c(u)(T, x) from the terminal condition phi and nonlinearity f."""

    def __init__(self, f: ex.Expr, phi: ex.Expr, n: int):
        self.f = f
        self.phi = phi
        self.n = n
        self.z = ex.z_names(n)
        self._phi_derivs: list[Callable[[float], float]] = []
        self._fns: dict[Code, Callable[[float], float]] = {}

    def phi_derivative(self, k: int) -> Callable[[float], float]:
        while len(self._phi_derivs) <= k:
            order = len(self._phi_derivs)
            self._phi_derivs.append(
                ex.compile_expr(ex.differentiate(self.phi, "x", order), ("x",))
            )
        return self._phi_derivs[k]

    def function(self, c: Code) -> Callable[[float], float]:
        """A callable x -> c(u)(T, x); raises math errors on domain violations."""
        fn = self._fns.get(c)
        if fn is not None:
            return fn
        if isinstance(c, Identity):
            fn = self.phi_derivative(0)
        elif isinstance(c, Deriv):
            fn = self.phi_derivative(c.k)
        else:
            jet = [self.phi_derivative(i) for i in range(self.n + 1)]
            g = ex.compile_expr(ex.partial(self.f, self.z, c.lam), self.z)

            def fn(x, g=g, jet=jet):
                return g(*[d(x) for d in jet])

        self._fns[c] = fn
        return fn

    def __call__(self, c: Code, x: float) -> float:
        value = ex.safe_call(self.function(c), x)
        if not math.isfinite(value) and not isinstance(value, ex.NonFinite):
            value = ex.NonFinite("non-finite terminal value", value)
        return value


@functools.lru_cache(maxsize=64)
def _evaluator(f: ex.Expr, phi: ex.Expr, n: int) -> TerminalEvaluator:
    return TerminalEvaluator(f, phi, n)


def terminal_value(c: Code, x: float, phi: ex.Expr, f: ex.Expr, n: int) -> float:
    """c(u)(T, x): φ, φ^(k), or (∂^λ f)(φ, φ', ..., φ^(n)) at x."""
    return _evaluator(f, phi, n)(c, x)


# ---------------------------------------------------------------------------
# sufficient condition for |H| <= 1


class Verdict(enum.Enum):
    HOLDS = "holds"
    FAILS = "fails"
    INCONCLUSIVE = "inconclusive"


def reachable_codes(n: int, order_cap: int) -> tuple[set[Code], bool]:
    """Codes reachable from Identity, with every FDeriv collapsed to f*.

    Returns (codes, escaped); escaped is True if some Deriv order exceeds
    order_cap.  All FDeriv codes share one atom count, so collapsing them
    does not change the minimum branch probability.
    """
    rep = f_star(n)
    seen: set[Code] = set()
    todo: list[Code] = [IDENTITY]
    escaped = False
    while todo:
        c = todo.pop()
        if c in seen:
            continue
        seen.add(c)
        for outcome in mechanism(c, n).outcomes:
            for child in outcome.children:
                if isinstance(child, FDeriv):
                    child = rep
                elif isinstance(child, Deriv) and child.k > order_cap:
                    escaped = True
                    continue
                if child not in seen:
                    todo.append(child)
    return seen, escaped


def check_bounds(K: float, rho_rate: float, T: float, n: int, order_cap: int) -> Verdict:
    """Check ρ(T) >= 1/min q_c and K <= F̄(T) for an exponential lifetime law."""
    if not (0 < K < 1) or rho_rate <= 0:
        raise ValueError("need 0 < K < 1 and rho_rate > 0")
    codes, escaped = reachable_codes(n, order_cap)
    if escaped:
        return Verdict.INCONCLUSIVE
    max_atoms = max(mechanism(c, n).atom_count for c in codes)
    density_at_T = rho_rate * math.exp(-rho_rate * T)
    tail_at_T = math.exp(-rho_rate * T)
    if density_at_T >= max_atoms and K <= tail_at_T:
        return Verdict.HOLDS
    return Verdict.FAILS


def dump_mechanism(c: Code, n: int) -> str:
    table = mechanism(c, n)
    lines = [f"code {c}  n={n}  atoms={table.atom_count}  q={table.probability:.6g}"]
    for i, o in enumerate(table.outcomes):
        kids = ", ".join(map(str, o.children))
        lines.append(f"{i:4d}  weight={o.weight:+.10g}  children=[{kids}]")
    return "\n".join(lines)
