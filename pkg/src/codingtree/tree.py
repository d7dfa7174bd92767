"""One realization of a random coding tree and its multiplicative weight.

Each branch lives for an exponential time with rate θ and moves as a
Brownian motion with generator ½∂ₓ².  A branch that dies before the horizon
T picks one outcome of the mechanism uniformly and multiplies the running
weight by weight / (q ρ(τ)); a branch that reaches T multiplies it by its
code evaluated on the terminal data, divided by F̄(T - birth).

The tree is walked depth first with an explicit stack.  Draw order per
node is fixed: lifetime, Gaussian increment, branch uniform, then the
children from left to right.  All draws are inverse-CDF transforms of one
uniform each, so a seed pins the sample bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from . import expr as ex
from .codes import IDENTITY, Code, TerminalEvaluator, _evaluator, mechanism
from .rng import inv_normal_cdf

MAX_DEPTH = 10**5


@dataclass(frozen=True)
class ProblemSpec:
    """∂ₜu + ½∂ₓ²u + f(u, ∂ₓu, ..., ∂ₓⁿu) = 0 on [t0, T], u(T, ·) = phi."""

    f: ex.Expr
    phi: ex.Expr
    n: int
    T: float
    t0: float = 0.0
    rho_rate: float = 1.0
    max_nodes: int = 10**7

    def __post_init__(self):
        if not self.T > self.t0 >= 0:
            raise ValueError(f"need T > t0 >= 0, got t0={self.t0}, T={self.T}")
        if self.rho_rate <= 0:
            raise ValueError("rho_rate must be positive")
        if self.n < 0:
            raise ValueError("n must be >= 0")
        extra = ex.free_vars(self.f) - set(ex.z_names(self.n))
        if extra:
            raise ValueError(f"f uses variables {sorted(extra)} beyond z0..z{self.n}")
        if ex.free_vars(self.phi) - {"x"}:
            raise ValueError("phi must be an expression in x")

    @classmethod
    def from_text(cls, f: str, phi: str, n: int, T: float, **kw) -> "ProblemSpec":
        return cls(ex.parse(f, ex.z_names(n)), ex.parse(phi, ["x"]), n, T, **kw)

    @property
    def evaluator(self) -> TerminalEvaluator:
        return _evaluator(self.f, self.phi, self.n)


@dataclass
class SampleOutcome:
    value: float
    nodes: int
    max_depth: int
    failure: str | None = None

    @property
    def failed(self) -> bool:
        return self.failure is not None


@dataclass
class NodeRecord:
    depth: int
    code: Code
    birth: float
    death: float
    x_birth: float
    x_death: float
    factor: float
    leaf: bool
    children: list[str] = field(default_factory=list)


def sample_lifetime(rng, rho_rate: float) -> float:
    return rng.exponential(rho_rate)


def sample_H(
    spec: ProblemSpec, t: float, x: float, c: Code = IDENTITY, rng=None, trace=None
) -> SampleOutcome:
    """Draw one tree rooted at (t, x) with code c and return its weight.

    If `trace` is a list, one NodeRecord per node is appended in visiting
    order.
    """
    T = spec.T
    if not spec.t0 <= t <= T:
        raise ValueError(f"t={t} outside [{spec.t0}, {T}]")
    ev = spec.evaluator
    if t == T:
        v = ev(c, x)
        if trace is not None:
            trace.append(NodeRecord(0, c, t, t, x, x, v, True))
        if not ex.is_finite(v):
            return SampleOutcome(math.nan, 1, 0, f"non-finite terminal value at x={x}")
        return SampleOutcome(v, 1, 0)

    n = spec.n
    theta = spec.rho_rate
    max_nodes = spec.max_nodes
    log = math.log
    sqrt = math.sqrt
    exp = math.exp
    inv_cdf = inv_normal_cdf
    uniform = rng.uniform
    tables: dict = {}

    value = 1.0
    nodes = 0
    deepest = 0
    stack = [(t, x, c, 0)]
    while stack:
        t, x, c, depth = stack.pop()
        nodes += 1
        if depth > deepest:
            deepest = depth
        if nodes > max_nodes or depth > MAX_DEPTH:
            return SampleOutcome(math.nan, nodes, deepest, "node budget exceeded")
        tau = -log(uniform()) / theta
        if t + tau >= T:
            dt = T - t
            X = x + sqrt(dt) * inv_cdf(uniform())
            v = ev(c, X)
            if not ex.is_finite(v):
                return SampleOutcome(math.nan, nodes, deepest, f"non-finite terminal value for {c} at x={X}")
            factor = v * exp(theta * dt)
            if trace is not None:
                trace.append(NodeRecord(depth, c, t, T, x, X, factor, True))
        else:
            X = x + sqrt(tau) * inv_cdf(uniform())
            entry = tables.get(c)
            if entry is None:
                table = mechanism(c, n)
                count = table.atom_count
                entry = tables[c] = (table.outcomes, count, [o.weight * count for o in table.outcomes])
            outcomes, count, scaled = entry
            idx = int(uniform() * count)
            if idx >= count:
                idx = count - 1
            # weight / (q ρ(τ)) with q = 1/count and ρ(τ) = θ e^{-θτ}
            factor = scaled[idx] * exp(theta * tau) / theta
            children = outcomes[idx].children
            s = t + tau
            for child in reversed(children):
                stack.append((s, X, child, depth + 1))
            if trace is not None:
                trace.append(
                    NodeRecord(depth, c, t, s, x, X, factor, False, [str(k) for k in children])
                )
        value *= factor
    if not math.isfinite(value):
        return SampleOutcome(math.nan, nodes, deepest, "non-finite tree weight")
    return SampleOutcome(value, nodes, deepest)


def format_trace(records: list[NodeRecord]) -> str:
    lines = []
    for r in records:
        pad = "  " * r.depth
        kind = "leaf" if r.leaf else "branch -> [" + ", ".join(r.children) + "]"
        lines.append(
            f"{pad}{r.code}  t=[{r.birth:.6g}, {r.death:.6g}]  "
            f"x={r.x_birth:.6g} -> {r.x_death:.6g}  factor={r.factor:.6g}  {kind}"
        )
    return "\n".join(lines)
