"""Coding trees for semilinear problems in d dimensions.

    ∂ₜu + μ·∇u + ½σ²Δu + f(u) = 0,   u(T, x) = Phi(s) or Phi(q),

with s = Σᵢxᵢ (ridge) or q = ‖x‖² (radial).  Codes are Identity,
FDeriv((k,)) for f^(k)(u) and GradCode(i) for ∂_{x_i}u (1-based i).

Applying ∂ₜ + μ·∇ + ½σ²Δ to f^(k)(u) gives

    -f^(k+1)(u) f(u) + ½σ² f^(k+2)(u) Σᵢ (∂_{x_i}u)²,

and to ∂_{x_i}u gives -f'(u) ∂_{x_i}u.  An FDeriv branch picks the first
term with probability ½, otherwise one coordinate i uniformly; the weights
stored below already include the inverse of that probability, so a tree
node contributes weight · e^{θτ}/θ.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from . import expr as ex
from .codes import IDENTITY, BranchOutcome, Code, FDeriv, Identity, MechanismTable
from .tree import MAX_DEPTH, SampleOutcome

FORMS = ("ridge", "radial")


@dataclass(frozen=True, slots=True)
class GradCode:
    i: int

    def __post_init__(self):
        if self.i < 1:
            raise ValueError("GradCode index is 1-based")

    def __str__(self):
        return f"G{self.i}"


@dataclass(frozen=True)
class DDProblemSpec:
    f: ex.Expr
    Phi: ex.Expr
    form: str
    d: int
    mu: float = 0.0
    sigma: float = 1.0
    T: float = 1.0
    t0: float = 0.0
    rho_rate: float = 1.0
    max_nodes: int = 10**7

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("d must be >= 1")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if self.form not in FORMS:
            raise ValueError(f"form must be one of {FORMS}")
        if not self.T > self.t0 >= 0:
            raise ValueError(f"need T > t0 >= 0, got t0={self.t0}, T={self.T}")
        if self.rho_rate <= 0:
            raise ValueError("rho_rate must be positive")
        if ex.free_vars(self.f) - {"z0"}:
            raise ValueError("f must be an expression in z0 only")
        if ex.free_vars(self.Phi) - {self.variable}:
            raise ValueError(f"Phi for the {self.form} form must be an expression in {self.variable}")

    @property
    def variable(self) -> str:
        return "s" if self.form == "ridge" else "q"

    @classmethod
    def from_text(cls, f: str, Phi: str, form: str, d: int, **kw) -> "DDProblemSpec":
        var = "s" if form == "ridge" else "q"
        return cls(ex.parse(f, ["z0"]), ex.parse(Phi, [var]), form, d, **kw)

    @property
    def evaluator(self) -> "DDTerminal":
        return _terminal(self.f, self.Phi, self.form)


def dd_mechanism(c: Code, d: int, sigma: float) -> MechanismTable:
    """Atoms of the d-dimensional mechanism with their selection-adjusted weights.

    For FDeriv codes the table lists the first-order atom followed by one
    Hessian atom per coordinate; the sampler picks the first with
    probability ½ and each of the others with probability 1/(2d).
    """
    if isinstance(c, Identity):
        return MechanismTable((BranchOutcome(1.0, (FDeriv((0,)),)),))
    if isinstance(c, GradCode):
        return MechanismTable((BranchOutcome(1.0, (FDeriv((1,)), c)),))
    if isinstance(c, FDeriv) and len(c.lam) == 1:
        k = c.lam[0]
        first = BranchOutcome(2.0, (FDeriv((0,)), FDeriv((k + 1,))))
        w = -d * sigma * sigma
        rest = tuple(
            BranchOutcome(w, (GradCode(i), GradCode(i), FDeriv((k + 2,)))) for i in range(1, d + 1)
        )
        return MechanismTable((first,) + rest)
    raise TypeError(f"not a d-dimensional semilinear code: {c!r}")


def dd_branch_probability(c: Code, d: int, index: int) -> float:
    if isinstance(c, FDeriv):
        return 0.5 if index == 0 else 0.5 / d
    return 1.0


class DDTerminal:
    """Terminal values of codes for ridge or radial Phi."""

    def __init__(self, f: ex.Expr, Phi: ex.Expr, form: str):
        self.form = form
        var = "s" if form == "ridge" else "q"
        self.var = var
        self.Phi = ex.compile_expr(Phi, (var,))
        self.dPhi = ex.compile_expr(ex.differentiate(Phi, var, 1), (var,))
        self._f = f
        self._fk: dict[int, object] = {}

    def reduce(self, x: np.ndarray) -> float:
        return float(x.sum()) if self.form == "ridge" else float(np.dot(x, x))

    def phi(self, x: np.ndarray) -> float:
        return self.Phi(self.reduce(x))

    def grad(self, x: np.ndarray, i: int) -> float:
        r = self.reduce(x)
        if self.form == "ridge":
            return self.dPhi(r)
        return 2.0 * float(x[i - 1]) * self.dPhi(r)

    def f_derivative(self, k: int):
        g = self._fk.get(k)
        if g is None:
            g = self._fk[k] = ex.compile_expr(ex.differentiate(self._f, "z0", k), ("z0",))
        return g

    def value(self, c: Code, x: np.ndarray) -> float:
        if isinstance(c, Identity):
            fn = lambda: self.phi(x)
        elif isinstance(c, GradCode):
            fn = lambda: self.grad(x, c.i)
        else:
            g = self.f_derivative(c.lam[0])
            fn = lambda: g(self.phi(x))
        v = ex.safe_call(fn)
        if not math.isfinite(v) and not isinstance(v, ex.NonFinite):
            v = ex.NonFinite("non-finite terminal value", v)
        return v


_terminal_memo: dict = {}


def _terminal(f, Phi, form) -> DDTerminal:
    key = (f, Phi, form)
    hit = _terminal_memo.get(key)
    if hit is None:
        hit = _terminal_memo[key] = DDTerminal(f, Phi, form)
    return hit


def _as_point(x, d: int) -> np.ndarray:
    if np.ndim(x) == 0:
        return np.full(d, float(x))
    arr = np.asarray(x, dtype=float)
    if arr.shape != (d,):
        raise ValueError(f"point has shape {arr.shape}, expected ({d},)")
    return arr


def dd_sample_H(spec: DDProblemSpec, t: float, x, c: Code = IDENTITY, rng=None, trace=None):
    """One tree of the d-dimensional engine; same draw order as tree.sample_H.

    Per node: lifetime, then d Gaussian coordinates, then (for FDeriv
    codes) one uniform that selects the branch.
    """
    T = spec.T
    if not spec.t0 <= t <= T:
        raise ValueError(f"t={t} outside [{spec.t0}, {T}]")
    d = spec.d
    x = _as_point(x, d)
    term = spec.evaluator
    if t == T:
        v = term.value(c, x)
        if not ex.is_finite(v):
            return SampleOutcome(math.nan, 1, 0, "non-finite terminal value")
        return SampleOutcome(v, 1, 0)

    theta = spec.rho_rate
    mu = spec.mu
    sigma = spec.sigma
    hess_weight = -d * sigma * sigma
    value = 1.0
    nodes = 0
    deepest = 0
    stack = [(t, x, c, 0)]
    while stack:
        t, x, c, depth = stack.pop()
        nodes += 1
        deepest = max(deepest, depth)
        if nodes > spec.max_nodes or depth > MAX_DEPTH:
            return SampleOutcome(math.nan, nodes, deepest, "node budget exceeded")
        tau = -math.log(rng.uniform()) / theta
        dt = T - t if t + tau >= T else tau
        X = x + (mu * dt) + (sigma * math.sqrt(dt)) * ndtri(rng.uniforms(d))
        if t + tau >= T:
            v = term.value(c, X)
            if not ex.is_finite(v):
                return SampleOutcome(math.nan, nodes, deepest, f"non-finite terminal value for {c}")
            factor = v * math.exp(theta * dt)
            if trace is not None:
                trace.append((depth, str(c), t, T, factor, True, []))
        else:
            s = t + tau
            if isinstance(c, Identity):
                weight, children = 1.0, (FDeriv((0,)),)
            elif isinstance(c, GradCode):
                weight, children = 1.0, (FDeriv((1,)), c)
            else:
                k = c.lam[0]
                u = rng.uniform()
                if u < 0.5:
                    weight, children = 2.0, (FDeriv((0,)), FDeriv((k + 1,)))
                else:
                    i = min(int((2.0 * u - 1.0) * d), d - 1) + 1
                    weight = hess_weight
                    children = (GradCode(i), GradCode(i), FDeriv((k + 2,)))
            factor = weight * math.exp(theta * tau) / theta
            for child in reversed(children):
                stack.append((s, X, child, depth + 1))
            if trace is not None:
                trace.append((depth, str(c), t, s, factor, False, [str(k) for k in children]))
        value *= factor
    if not math.isfinite(value):
        return SampleOutcome(math.nan, nodes, deepest, "non-finite tree weight")
    return SampleOutcome(value, nodes, deepest)
