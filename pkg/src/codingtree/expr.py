"""Small expression language for nonlinearities and terminal conditions.

Expressions are immutable trees with cached hashes, so they can be used as
dictionary keys for derivative and compilation memo tables.  Only constant
folding and 0/1 identities are applied on construction; there is no general
simplifier.

Grammar::

    expr  := term (('+'|'-') term)*
    term  := factor (('*'|'/') factor)*
    factor:= unary ('^' factor)?
    unary := '-' unary | atom
    atom  := number | ident | ident '(' args ')' | '(' expr ')'

Note that with this grammar ``-x^2`` reads as ``(-x)^2``.
"""

from __future__ import annotations

import math
import re
import threading
from typing import Callable, Iterable, Mapping, Sequence

UNARY_OPS = ("neg", "exp", "log", "sin", "cos", "tan", "tanh", "sqrt")
BINARY_OPS = ("add", "sub", "mul", "div", "pow")
FUNCTIONS = ("exp", "log", "sin", "cos", "tan", "tanh", "sqrt")


class ExprError(ValueError):
    pass


class ParseError(ExprError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


class UnboundVariable(ExprError):
    pass


class NonFinite(float):
    """A NaN/inf result tagged with the reason it appeared."""

    reason: str

    def __new__(cls, reason: str = "non-finite", value: float = math.nan):
        obj = super().__new__(cls, value)
        obj.reason = reason
        return obj

    def __repr__(self):
        return f"NonFinite({self.reason!r})"


def is_finite(value: float) -> bool:
    return not isinstance(value, NonFinite) and math.isfinite(value)


class Expr:
    __slots__ = ("_key", "_hash")

    def __init__(self, key: tuple):
        self._key = key
        self._hash = hash(key)

    def __hash__(self):
        return self._hash

    def __eq__(self, other):
        if self is other:
            return True
        if not isinstance(other, Expr) or self._hash != other._hash:
            return False
        return self._key == other._key

    def __ne__(self, other):
        return not self == other

    def __reduce__(self):
        return (type(self), self._key[1:])

    def __repr__(self):
        return f"Expr({to_text(self)!r})"

    def __str__(self):
        return to_text(self)


class Const(Expr):
    __slots__ = ()

    def __init__(self, value: float):
        super().__init__(("const", float(value)))

    @property
    def value(self) -> float:
        return self._key[1]


class Var(Expr):
    __slots__ = ()

    def __init__(self, name: str):
        super().__init__(("var", name))

    @property
    def name(self) -> str:
        return self._key[1]


class Unary(Expr):
    __slots__ = ()

    def __init__(self, op: str, child: Expr):
        if op not in UNARY_OPS:
            raise ExprError(f"unknown unary op {op!r}")
        super().__init__(("unary", op, child))

    @property
    def op(self) -> str:
        return self._key[1]

    @property
    def child(self) -> Expr:
        return self._key[2]


class Binary(Expr):
    __slots__ = ()

    def __init__(self, op: str, left: Expr, right: Expr):
        if op not in BINARY_OPS:
            raise ExprError(f"unknown binary op {op!r}")
        super().__init__(("binary", op, left, right))

    @property
    def op(self) -> str:
        return self._key[1]

    @property
    def left(self) -> Expr:
        return self._key[2]

    @property
    def right(self) -> Expr:
        return self._key[3]


class Clamp(Expr):
    __slots__ = ()

    def __init__(self, child: Expr, lo: float, hi: float):
        super().__init__(("clamp", child, float(lo), float(hi)))

    @property
    def child(self) -> Expr:
        return self._key[1]

    @property
    def lo(self) -> float:
        return self._key[2]

    @property
    def hi(self) -> float:
        return self._key[3]


class Indicator(Expr):
    """1 where lo < child < hi, else 0.  Arises as the derivative of Clamp."""

    __slots__ = ()

    def __init__(self, child: Expr, lo: float, hi: float):
        super().__init__(("ind", child, float(lo), float(hi)))

    @property
    def child(self) -> Expr:
        return self._key[1]

    @property
    def lo(self) -> float:
        return self._key[2]

    @property
    def hi(self) -> float:
        return self._key[3]


ZERO = Const(0.0)
ONE = Const(1.0)


# ---------------------------------------------------------------------------
# folding constructors

_UNARY_FN = {
    "neg": lambda a: -a,
    "exp": math.exp,
    "log": math.log,
    "sin": math.sin,
    "cos": math.cos,
    "tan": math.tan,
    "tanh": math.tanh,
    "sqrt": math.sqrt,
}


def _pow_int(a: float, k: float) -> float:
    return a ** int(k)


_BINARY_FN = {
    "add": lambda a, b: a + b,
    "sub": lambda a, b: a - b,
    "mul": lambda a, b: a * b,
    "div": lambda a, b: a / b,
    "pow": _pow_int,
}


def _is_const(e: Expr, value: float | None = None) -> bool:
    return isinstance(e, Const) and (value is None or e.value == value)


def _fold_value(fn, *args) -> float | None:
    try:
        value = fn(*args)
    except (ValueError, ZeroDivisionError, OverflowError):
        return None
    return value if math.isfinite(value) else None


def unary(op: str, child: Expr) -> Expr:
    if isinstance(child, Const):
        value = _fold_value(_UNARY_FN[op], child.value)
        if value is not None:
            return Const(value)
    if op == "neg":
        if isinstance(child, Unary) and child.op == "neg":
            return child.child
        if isinstance(child, Binary) and child.op == "mul" and isinstance(child.left, Const):
            return mul(Const(-child.left.value), child.right)
    return Unary(op, child)


def neg(a: Expr) -> Expr:
    return unary("neg", a)


def add(a: Expr, b: Expr) -> Expr:
    if _is_const(a, 0.0):
        return b
    if _is_const(b, 0.0):
        return a
    return _binary("add", a, b)


def sub(a: Expr, b: Expr) -> Expr:
    if _is_const(b, 0.0):
        return a
    if _is_const(a, 0.0):
        return neg(b)
    return _binary("sub", a, b)


def mul(a: Expr, b: Expr) -> Expr:
    if _is_const(a, 0.0) or _is_const(b, 0.0):
        return ZERO
    if _is_const(a, 1.0):
        return b
    if _is_const(b, 1.0):
        return a
    if isinstance(b, Const) and not isinstance(a, Const):
        a, b = b, a
    if isinstance(a, Const):
        if a.value == -1.0:
            return neg(b)
        if isinstance(b, Unary) and b.op == "neg":
            return mul(Const(-a.value), b.child)
        # c1 * (c2 * e) -> (c1 c2) * e
        if isinstance(b, Binary) and b.op == "mul" and isinstance(b.left, Const):
            value = _fold_value(_BINARY_FN["mul"], a.value, b.left.value)
            if value is not None:
                return mul(Const(value), b.right)
    return _binary("mul", a, b)


def div(a: Expr, b: Expr) -> Expr:
    if _is_const(a, 0.0) and not _is_const(b, 0.0):
        return ZERO
    if _is_const(b, 1.0):
        return a
    return _binary("div", a, b)


def power(a: Expr, k: int) -> Expr:
    """a^k for an integer k; negative k becomes 1/a^|k|."""
    if k < 0:
        return div(ONE, power(a, -k))
    if k == 0:
        return ONE
    if k == 1:
        return a
    return _binary("pow", a, Const(float(k)))


def _binary(op: str, a: Expr, b: Expr) -> Expr:
    if isinstance(a, Const) and isinstance(b, Const):
        value = _fold_value(_BINARY_FN[op], a.value, b.value)
        if value is not None:
            return Const(value)
    return Binary(op, a, b)


def clamp(a: Expr, lo: float, hi: float) -> Expr:
    if isinstance(a, Const):
        return Const(min(hi, max(lo, a.value)))
    return Clamp(a, lo, hi)


def indicator(a: Expr, lo: float, hi: float) -> Expr:
    if isinstance(a, Const):
        return ONE if lo < a.value < hi else ZERO
    return Indicator(a, lo, hi)


def general_power(a: Expr, b: Expr) -> Expr:
    """a^b as the grammar defines it: integer constants stay, others use exp/log."""
    if isinstance(b, Const) and b.value == int(b.value) and abs(b.value) < 2**31:
        return power(a, int(b.value))
    return unary("exp", mul(b, unary("log", a)))


def fold(e: Expr) -> Expr:
    """Rebuild `e` through the folding constructors."""
    memo: dict[Expr, Expr] = {}

    def go(node: Expr) -> Expr:
        hit = memo.get(node)
        if hit is not None:
            return hit
        if isinstance(node, (Const, Var)):
            out = node
        elif isinstance(node, Unary):
            out = unary(node.op, go(node.child))
        elif isinstance(node, Binary):
            left, right = go(node.left), go(node.right)
            if node.op == "pow":
                out = general_power(left, right)
            else:
                out = _SMART[node.op](left, right)
        elif isinstance(node, Clamp):
            out = clamp(go(node.child), node.lo, node.hi)
        elif isinstance(node, Indicator):
            out = indicator(go(node.child), node.lo, node.hi)
        else:
            raise ExprError(f"unknown node {node!r}")
        memo[node] = out
        return out

    return go(e)


_SMART = {"add": add, "sub": sub, "mul": mul, "div": div}


# ---------------------------------------------------------------------------
# parser

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<id>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>[-+*/^(),]))"
)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if m is None:
            offset = pos + len(text[pos:]) - len(text[pos:].lstrip())
            raise ParseError(f"unexpected character {text[offset]!r}", offset)
        kind = m.lastgroup
        tokens.append((kind, m.group(kind), m.start(kind)))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str, allowed: Sequence[str]):
        self.tokens = _tokenize(text)
        self.i = 0
        self.allowed = set(allowed)

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value: str):
        kind, text, offset = self.take()
        if text != value or kind != "op":
            what = "end of input" if kind == "end" else repr(text)
            raise ParseError(f"expected {value!r}, got {what}", offset)

    def parse(self) -> Expr:
        e = self.expr()
        kind, text, offset = self.peek()
        if kind != "end":
            raise ParseError(f"unexpected token {text!r}", offset)
        return e

    def expr(self) -> Expr:
        e = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            rhs = self.term()
            e = add(e, rhs) if op == "+" else sub(e, rhs)
        return e

    def term(self) -> Expr:
        e = self.factor()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            rhs = self.factor()
            e = mul(e, rhs) if op == "*" else div(e, rhs)
        return e

    def factor(self) -> Expr:
        base = self.unary()
        if self.peek()[0] == "op" and self.peek()[1] == "^":
            self.take()
            return general_power(base, self.factor())
        return base

    def unary(self) -> Expr:
        if self.peek()[0] == "op" and self.peek()[1] == "-":
            self.take()
            return neg(self.unary())
        return self.atom()

    def atom(self) -> Expr:
        kind, text, offset = self.take()
        if kind == "num":
            return Const(float(text))
        if kind == "id":
            if self.peek()[0] == "op" and self.peek()[1] == "(":
                return self.call(text, offset)
            if text not in self.allowed:
                raise ParseError(f"unknown identifier {text!r}", offset)
            return Var(text)
        if kind == "op" and text == "(":
            e = self.expr()
            self.expect(")")
            return e
        what = "end of input" if kind == "end" else repr(text)
        raise ParseError(f"unexpected {what}", offset)

    def call(self, name: str, offset: int) -> Expr:
        self.expect("(")
        args = [self.expr()]
        while self.peek()[0] == "op" and self.peek()[1] == ",":
            self.take()
            args.append(self.expr())
        self.expect(")")
        if name in FUNCTIONS:
            if len(args) != 1:
                raise ParseError(f"{name} takes 1 argument, got {len(args)}", offset)
            return unary(name, args[0])
        if name in ("clamp", "ind"):
            if len(args) != 3:
                raise ParseError(f"{name} takes 3 arguments, got {len(args)}", offset)
            lo, hi = args[1], args[2]
            if not (isinstance(lo, Const) and isinstance(hi, Const)):
                raise ParseError(f"{name} bounds must be constants", offset)
            build = clamp if name == "clamp" else indicator
            return build(args[0], lo.value, hi.value)
        raise ParseError(f"unknown function {name!r}", offset)


def parse(text: str, allowed_vars: Iterable[str]) -> Expr:
    """Parse `text` into a folded expression over `allowed_vars`."""
    return _Parser(text, list(allowed_vars)).parse()


# ---------------------------------------------------------------------------
# printer

_PREC = {"add": 1, "sub": 1, "mul": 2, "div": 2, "pow": 4}


def _prec(e: Expr) -> int:
    if isinstance(e, Binary):
        return _PREC[e.op]
    if isinstance(e, Unary) and e.op == "neg":
        return 3
    if isinstance(e, Const) and (e.value < 0 or math.copysign(1.0, e.value) < 0):
        return 3
    return 5


def _num(value: float) -> str:
    text = repr(float(value))
    if text in ("inf", "-inf", "nan"):
        raise ExprError(f"cannot print non-finite constant {text}")
    return text


def to_text(e: Expr) -> str:
    """Print `e` so that `parse` rebuilds the same tree."""
    if isinstance(e, Const):
        return _num(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Unary):
        if e.op == "neg":
            child = to_text(e.child)
            return "-" + (f"({child})" if _prec(e.child) < 3 else child)
        return f"{e.op}({to_text(e.child)})"
    if isinstance(e, (Clamp, Indicator)):
        name = "clamp" if isinstance(e, Clamp) else "ind"
        return f"{name}({to_text(e.child)}, {_num(e.lo)}, {_num(e.hi)})"
    p = _PREC[e.op]
    left, right = to_text(e.left), to_text(e.right)
    if e.op == "pow":
        if _prec(e.left) < 3 or _prec(e.left) == 4:
            left = f"({left})"
        if _prec(e.right) < 3:
            right = f"({right})"
        return f"{left}^{right}"
    if _prec(e.left) < p:
        left = f"({left})"
    if _prec(e.right) <= p:
        right = f"({right})"
    sym = {"add": "+", "sub": "-", "mul": "*", "div": "/"}[e.op]
    return f"{left} {sym} {right}"


# ---------------------------------------------------------------------------
# differentiation

_deriv_memo: dict[tuple[Expr, str], Expr] = {}
_memo_lock = threading.Lock()


def free_vars(e: Expr) -> set[str]:
    out: set[str] = set()
    seen: set[Expr] = set()
    stack = [e]
    while stack:
        node = stack.pop()
        if node in seen:
            continue
        seen.add(node)
        if isinstance(node, Var):
            out.add(node.name)
        else:
            stack.extend(c for c in node._key[1:] if isinstance(c, Expr))
    return out


def differentiate(e: Expr, var: str, order: int = 1) -> Expr:
    """Symbolic derivative of `e` in `var`; each (e, var) result is memoized."""
    for _ in range(order):
        e = _d(e, var)
    return e


def _d(e: Expr, var: str) -> Expr:
    key = (e, var)
    hit = _deriv_memo.get(key)
    if hit is not None:
        return hit
    out = _d_rule(e, var)
    with _memo_lock:
        _deriv_memo.setdefault(key, out)
    return out


def _d_rule(e: Expr, var: str) -> Expr:
    if isinstance(e, Const):
        return ZERO
    if isinstance(e, Var):
        return ONE if e.name == var else ZERO
    if isinstance(e, Indicator):
        return ZERO
    if isinstance(e, Clamp):
        return mul(indicator(e.child, e.lo, e.hi), _d(e.child, var))
    if isinstance(e, Unary):
        a = e.child
        da = _d(a, var)
        if _is_const(da, 0.0):
            return ZERO
        op = e.op
        if op == "neg":
            return neg(da)
        if op == "exp":
            return mul(e, da)
        if op == "log":
            return div(da, a)
        if op == "sin":
            return mul(unary("cos", a), da)
        if op == "cos":
            return neg(mul(unary("sin", a), da))
        if op == "tan":
            return mul(add(ONE, power(e, 2)), da)
        if op == "tanh":
            return mul(sub(ONE, power(e, 2)), da)
        if op == "sqrt":
            return div(da, mul(Const(2.0), e))
        raise ExprError(f"no derivative rule for {op}")
    a, b = e.left, e.right
    op = e.op
    if op == "pow":
        k = int(b.value)
        return mul(mul(Const(float(k)), power(a, k - 1)), _d(a, var))
    da, db = _d(a, var), _d(b, var)
    if op == "add":
        return add(da, db)
    if op == "sub":
        return sub(da, db)
    if op == "mul":
        return add(mul(da, b), mul(a, db))
    if op == "div":
        if _is_const(db, 0.0):
            return div(da, b)
        return div(sub(mul(da, b), mul(a, db)), power(b, 2))
    raise ExprError(f"no derivative rule for {op}")


_partial_memo: dict[tuple[Expr, tuple[str, ...], tuple[int, ...]], Expr] = {}


def partial(e: Expr, names: Sequence[str], orders: Sequence[int]) -> Expr:
    """Mixed partial derivative ∂^orders e, memoized per multi-index."""
    orders = tuple(int(o) for o in orders)
    names = tuple(names)
    key = (e, names, orders)
    hit = _partial_memo.get(key)
    if hit is not None:
        return hit
    if not any(orders):
        out = e
    else:
        i = max(j for j, o in enumerate(orders) if o > 0)
        parent = list(orders)
        parent[i] -= 1
        out = _d(partial(e, names, parent), names[i])
    with _memo_lock:
        _partial_memo.setdefault(key, out)
    return out


# ---------------------------------------------------------------------------
# evaluation


def _topo(e: Expr) -> list[Expr]:
    """Post-order list of the distinct nodes of e (children before parents)."""
    order: list[Expr] = []
    seen: set[Expr] = set()
    stack: list[tuple[Expr, bool]] = [(e, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if node in seen:
            continue
        seen.add(node)
        stack.append((node, True))
        for c in reversed(node._key[1:]):
            if isinstance(c, Expr) and c not in seen:
                stack.append((c, False))
    return order


def evaluate(e: Expr, bindings: Mapping[str, float]) -> float:
    """Interpret `e` in double precision.

    Domain violations (log of a non-positive number, division by zero,
    overflow) give a NonFinite value instead of raising.
    """
    values: dict[Expr, float] = {}
    for node in _topo(e):
        if isinstance(node, Const):
            v = node.value
        elif isinstance(node, Var):
            try:
                v = float(bindings[node.name])
            except KeyError:
                raise UnboundVariable(f"unbound variable {node.name!r}") from None
        elif isinstance(node, Unary):
            a = values[node.child]
            if isinstance(a, NonFinite):
                v = a
            else:
                try:
                    v = _UNARY_FN[node.op](a)
                except (ValueError, ZeroDivisionError, OverflowError) as exc:
                    v = NonFinite(f"{node.op}: {exc}")
        elif isinstance(node, Binary):
            a, b = values[node.left], values[node.right]
            if isinstance(a, NonFinite):
                v = a
            elif isinstance(b, NonFinite):
                v = b
            else:
                try:
                    v = _BINARY_FN[node.op](a, b)
                except (ValueError, ZeroDivisionError, OverflowError) as exc:
                    v = NonFinite(f"{node.op}: {exc}")
        elif isinstance(node, Clamp):
            a = values[node.child]
            v = a if isinstance(a, NonFinite) else min(node.hi, max(node.lo, a))
        elif isinstance(node, Indicator):
            a = values[node.child]
            v = a if isinstance(a, NonFinite) else (1.0 if node.lo < a < node.hi else 0.0)
        else:
            raise ExprError(f"unknown node {node!r}")
        if not isinstance(v, NonFinite) and not math.isfinite(v):
            v = NonFinite("non-finite intermediate", v)
        values[node] = v
    return values[e]


# Compiled evaluation: the expression DAG becomes straight-line Python code
# with one temporary per distinct node.

_PY_UNARY = {
    "neg": "-{}",
    "exp": "_exp({})",
    "log": "_log({})",
    "sin": "_sin({})",
    "cos": "_cos({})",
    "tan": "_tan({})",
    "tanh": "_tanh({})",
    "sqrt": "_sqrt({})",
}
_PY_BINARY = {"add": "{} + {}", "sub": "{} - {}", "mul": "{} * {}", "div": "{} / {}"}
_PY_ENV = {
    "_exp": math.exp,
    "_log": math.log,
    "_sin": math.sin,
    "_cos": math.cos,
    "_tan": math.tan,
    "_tanh": math.tanh,
    "_sqrt": math.sqrt,
    "_min": min,
    "_max": max,
}

_compiled_memo: dict[tuple[Expr, tuple[str, ...]], Callable[..., float]] = {}


def compile_expr(e: Expr, args: Sequence[str]) -> Callable[..., float]:
    """Return a fast positional-argument callable for `e`.

    The callable raises the usual Python math exceptions on domain errors;
    wrap with `safe_call` to get NonFinite values instead.
    """
    args = tuple(args)
    key = (e, args)
    hit = _compiled_memo.get(key)
    if hit is not None:
        return hit
    missing = free_vars(e) - set(args)
    if missing:
        raise UnboundVariable(f"unbound variables {sorted(missing)}")
    names: dict[Expr, str] = {}
    lines = []
    for node in _topo(e):
        if isinstance(node, Const):
            names[node] = f"({node.value!r})"
            continue
        if isinstance(node, Var):
            names[node] = node.name
            continue
        tmp = f"_t{len(lines)}"
        if isinstance(node, Unary):
            code = _PY_UNARY[node.op].format(names[node.child])
        elif isinstance(node, Binary):
            a, b = names[node.left], names[node.right]
            if node.op == "pow":
                code = f"{a} ** {int(node.right.value)}"
            else:
                code = _PY_BINARY[node.op].format(a, b)
        elif isinstance(node, Clamp):
            code = f"_min({node.hi!r}, _max({node.lo!r}, {names[node.child]}))"
        else:
            c = names[node.child]
            code = f"(1.0 if {node.lo!r} < {c} < {node.hi!r} else 0.0)"
        lines.append(f"    {tmp} = {code}")
        names[node] = tmp
    body = "\n".join(lines) if lines else "    pass"
    src = f"def _fn({', '.join(args)}):\n{body}\n    return float({names[e]})\n"
    namespace = dict(_PY_ENV)
    exec(compile(src, "<expr>", "exec"), namespace)
    fn = namespace["_fn"]
    with _memo_lock:
        _compiled_memo.setdefault(key, fn)
    return fn


def safe_call(fn: Callable[..., float], *args: float) -> float:
    try:
        return fn(*args)
    except (ValueError, ZeroDivisionError, OverflowError) as exc:
        return NonFinite(str(exc))


def substitute(e: Expr, bindings: Mapping[str, Expr]) -> Expr:
    """Replace variables by expressions, re-folding along the way."""
    memo: dict[Expr, Expr] = {}
    for node in _topo(e):
        if isinstance(node, Var):
            out = bindings.get(node.name, node)
        elif isinstance(node, Const):
            out = node
        elif isinstance(node, Unary):
            out = unary(node.op, memo[node.child])
        elif isinstance(node, Binary):
            a, b = memo[node.left], memo[node.right]
            out = power(a, int(node.right.value)) if node.op == "pow" else _SMART[node.op](a, b)
        elif isinstance(node, Clamp):
            out = clamp(memo[node.child], node.lo, node.hi)
        else:
            out = indicator(memo[node.child], node.lo, node.hi)
        memo[node] = out
    return memo[e]


def size(e: Expr) -> int:
    """Number of distinct nodes."""
    return len(_topo(e))


def z_names(n: int) -> tuple[str, ...]:
    return tuple(f"z{i}" for i in range(n + 1))
