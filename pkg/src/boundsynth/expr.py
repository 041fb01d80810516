"""Activation-function expressions: parsing, printing, evaluation, differentiation.

An expression is an immutable tree of :class:`Expr` nodes over the variables
``x1 .. xd``.  Everything else in the package (sampling, the local minimizer,
the interval verifier) evaluates activations through this module.

Grammar::

    expr   := term (('+'|'-') term)*
    term   := factor (('*'|'/') factor)*
    factor := '-' factor | atom ('^' integer)?
    atom   := number | 'x'integer | func '(' expr (',' expr)* ')' | '(' expr ')'
    func   := exp | log | tanh | sqrt | min | max | abs | sigmoid
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Expr",
    "ActivationDef",
    "ExprError",
    "ExprSyntaxError",
    "UnknownIdentifier",
    "ArityError",
    "DomainError",
    "const",
    "var",
    "parse",
    "to_text",
    "evaluate",
    "differentiate",
    "gradient",
    "substitute",
    "compile_scalar",
    "compile_numpy",
]

UNARY = ("neg", "exp", "log", "tanh", "sqrt", "abs")
BINARY = ("add", "sub", "mul", "div", "min", "max")
FUNC_ARITY = {
    "exp": 1,
    "log": 1,
    "tanh": 1,
    "sqrt": 1,
    "abs": 1,
    "sigmoid": 1,
    "min": 2,
    "max": 2,
}


class ExprError(Exception):
    """Base class for expression errors."""


class ExprSyntaxError(ExprError, SyntaxError):
    def __init__(self, message: str, position: int, expected: Sequence[str] = ()):
        self.position = position
        self.expected = tuple(expected)
        detail = f" (expected one of: {', '.join(self.expected)})" if self.expected else ""
        super().__init__(f"{message} at position {position}{detail}")


class UnknownIdentifier(ExprError):
    pass


class ArityError(ExprError):
    pass


class DomainError(ExprError, ArithmeticError):
    """Raised when a point lies outside an operation's domain."""


@dataclass(frozen=True, eq=True)
class Expr:
    """Immutable expression node.

    ``kind`` is one of ``const``, ``var``, the unary/binary kinds, ``pow`` (with
    a non-negative integer ``value``) or ``select_ge``.  ``select_ge(a, b, p, q)``
    is ``p`` where ``a >= b`` and ``q`` elsewhere; it only appears in derivatives
    of ``min``/``max``/``abs``.
    """

    kind: str
    args: tuple["Expr", ...] = ()
    value: float | int | None = None

    def __post_init__(self):
        if self.kind == "pow":
            if not isinstance(self.value, int) or self.value < 0:
                raise ValueError("pow exponent must be a non-negative integer")
        elif self.kind == "var":
            if not isinstance(self.value, int) or self.value < 1:
                raise ValueError("variable index must be >= 1")
        elif self.kind == "const":
            if not math.isfinite(self.value):
                raise ValueError("constants must be finite")

    @cached_property
    def arity(self) -> int:
        if self.kind == "var":
            return self.value
        return max((a.arity for a in self.args), default=0)

    def __str__(self) -> str:
        return to_text(self)

    # Operator sugar for building trees in Python code.
    def __add__(self, other):
        return Expr("add", (self, _lift(other)))

    def __radd__(self, other):
        return Expr("add", (_lift(other), self))

    def __sub__(self, other):
        return Expr("sub", (self, _lift(other)))

    def __rsub__(self, other):
        return Expr("sub", (_lift(other), self))

    def __mul__(self, other):
        return Expr("mul", (self, _lift(other)))

    def __rmul__(self, other):
        return Expr("mul", (_lift(other), self))

    def __truediv__(self, other):
        return Expr("div", (self, _lift(other)))

    def __rtruediv__(self, other):
        return Expr("div", (_lift(other), self))

    def __neg__(self):
        return Expr("neg", (self,))

    def __pow__(self, k: int):
        return Expr("pow", (self,), int(k))


def _lift(x) -> Expr:
    return x if isinstance(x, Expr) else const(x)


def const(value: float) -> Expr:
    return Expr("const", (), float(value))


def var(index: int) -> Expr:
    return Expr("var", (), int(index))


def call(name: str, *args: Expr) -> Expr:
    if name == "sigmoid":
        (a,) = args
        return Expr("div", (const(1.0), Expr("add", (const(1.0), Expr("exp", (Expr("neg", (a,)),))))))
    return Expr(name, tuple(args))


@dataclass(frozen=True)
class ActivationDef:
    name: str
    arity: int
    body: Expr = field(repr=False)

    def __post_init__(self):
        if self.arity < 1:
            raise ValueError("activation arity must be positive")
        if self.body.arity > self.arity:
            raise ValueError(
                f"activation {self.name!r} uses x{self.body.arity} but declares arity {self.arity}"
            )

    @classmethod
    def from_text(cls, text: str, name: str | None = None, arity: int | None = None) -> "ActivationDef":
        body = parse(text)
        if body.arity == 0 and arity is None:
            raise ArityError("expression has no variables; pass arity explicitly")
        return cls(name or text, arity or body.arity, body)

    def __call__(self, *xs: float) -> float:
        return evaluate(self.body, xs)


# --------------------------------------------------------------------------
# Parsing

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^(),]))"
)
_VAR = re.compile(r"x([1-9][0-9]*)$")


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    text = text.rstrip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            raise ExprSyntaxError(f"unexpected character {text[pos:pos + 1]!r}", pos)
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), start))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value: str):
        kind, val, pos = self.take()
        if val != value or kind == "end":
            raise ExprSyntaxError(f"unexpected {val or 'end of input'!r}", pos, [value])

    def parse(self) -> Expr:
        node = self.expr()
        kind, val, pos = self.peek()
        if kind != "end":
            raise ExprSyntaxError(f"unexpected {val!r}", pos, ["+", "-", "*", "/", "end of input"])
        return node

    def expr(self) -> Expr:
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            node = Expr("add" if op == "+" else "sub", (node, self.term()))
        return node

    def term(self) -> Expr:
        node = self.factor()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            node = Expr("mul" if op == "*" else "div", (node, self.factor()))
        return node

    def factor(self) -> Expr:
        if self.peek()[:2] == ("op", "-"):
            self.take()
            return Expr("neg", (self.factor(),))
        node = self.atom()
        if self.peek()[:2] == ("op", "^"):
            self.take()
            kind, val, pos = self.take()
            if kind != "num" or not val.isdigit():
                raise ExprSyntaxError("exponent must be a non-negative integer", pos, ["integer"])
            node = Expr("pow", (node,), int(val))
        return node

    def atom(self) -> Expr:
        kind, val, pos = self.take()
        if kind == "num":
            return const(float(val))
        if kind == "name":
            m = _VAR.match(val)
            if m:
                return var(int(m.group(1)))
            if val not in FUNC_ARITY:
                raise UnknownIdentifier(f"unknown identifier {val!r} at position {pos}")
            self.expect("(")
            args = [self.expr()]
            while self.peek()[:2] == ("op", ","):
                self.take()
                args.append(self.expr())
            self.expect(")")
            if len(args) != FUNC_ARITY[val]:
                raise ArityError(f"{val} takes {FUNC_ARITY[val]} argument(s), got {len(args)}")
            return call(val, *args)
        if (kind, val) == ("op", "("):
            node = self.expr()
            self.expect(")")
            return node
        raise ExprSyntaxError(
            f"unexpected {val or 'end of input'!r}", pos, ["number", "variable", "function", "("]
        )


def parse(text: str) -> Expr:
    """Parse ``text`` into an expression tree."""
    return _Parser(text).parse()


_INFIX = {"add": "+", "sub": "-", "mul": "*", "div": "/"}


def to_text(e: Expr) -> str:
    """Render ``e`` in the surface syntax; ``parse(to_text(e))`` evaluates like ``e``."""
    k = e.kind
    if k == "const":
        text = repr(e.value)
        return f"(-{text[1:]})" if e.value < 0 or text.startswith("-") else text
    if k == "var":
        return f"x{e.value}"
    if k in _INFIX:
        a, b = e.args
        return f"({to_text(a)} {_INFIX[k]} {to_text(b)})"
    if k == "neg":
        return f"(-{to_text(e.args[0])})"
    if k == "pow":
        return f"({to_text(e.args[0])})^{e.value}"
    return f"{k}({', '.join(to_text(a) for a in e.args)})"


# --------------------------------------------------------------------------
# Evaluation


def _scalar_unary(kind: str) -> Callable[[float], float]:
    def exp(a):
        try:
            return math.exp(a)
        except OverflowError:
            return math.inf

    def log(a):
        if a <= 0:
            raise DomainError(f"log of non-positive value {a!r}")
        return math.log(a)

    def sqrt(a):
        if a < 0:
            raise DomainError(f"sqrt of negative value {a!r}")
        return math.sqrt(a)

    return {
        "neg": lambda a: -a,
        "exp": exp,
        "log": log,
        "tanh": math.tanh,
        "sqrt": sqrt,
        "abs": abs,
    }[kind]


def _scalar_div(a, b):
    if b == 0:
        raise DomainError("division by zero")
    return a / b


_SCALAR_BINARY = {
    "add": lambda a, b: a + b,
    "sub": lambda a, b: a - b,
    "mul": lambda a, b: a * b,
    "div": _scalar_div,
    "min": min,
    "max": max,
}


def compile_scalar(e: Expr) -> Callable[[Sequence[float]], float]:
    """Compile ``e`` into a fast closure ``f(point) -> float``."""
    k = e.kind
    if k == "const":
        c = e.value
        return lambda x: c
    if k == "var":
        i = e.value - 1
        return lambda x: x[i]
    if k == "pow":
        f = compile_scalar(e.args[0])
        n = e.value
        return lambda x: f(x) ** n
    if k == "select_ge":
        fa, fb, fp, fq = (compile_scalar(a) for a in e.args)
        return lambda x: fp(x) if fa(x) >= fb(x) else fq(x)
    if k in UNARY:
        f = compile_scalar(e.args[0])
        op = _scalar_unary(k)
        return lambda x: op(f(x))
    fa, fb = (compile_scalar(a) for a in e.args)
    op = _SCALAR_BINARY[k]
    return lambda x: op(fa(x), fb(x))


def evaluate(e: Expr, point: Sequence[float]) -> float:
    """Evaluate ``e`` at ``point`` (length must cover the arity)."""
    if len(point) < e.arity:
        raise ValueError(f"point has {len(point)} coordinates, expression needs {e.arity}")
    return compile_scalar(e)([float(p) for p in point])


_NP_UNARY = {
    "neg": np.negative,
    "exp": np.exp,
    "log": np.log,
    "tanh": np.tanh,
    "sqrt": np.sqrt,
    "abs": np.abs,
}
_NP_BINARY = {
    "add": np.add,
    "sub": np.subtract,
    "mul": np.multiply,
    "div": np.divide,
    "min": np.minimum,
    "max": np.maximum,
}


def compile_numpy(e: Expr) -> Callable[[np.ndarray], np.ndarray]:
    """Compile ``e`` for vectorized evaluation.

    The closure takes an array of shape ``(d, n)`` and returns shape ``(n,)``.
    Out-of-domain points come back as ``nan``/``inf``; callers decide.
    """
    k = e.kind
    if k == "const":
        c = e.value
        return lambda X: np.full(X.shape[1], c)
    if k == "var":
        i = e.value - 1
        return lambda X: X[i]
    if k == "pow":
        f = compile_numpy(e.args[0])
        n = e.value
        return lambda X: f(X) ** n
    if k == "select_ge":
        fa, fb, fp, fq = (compile_numpy(a) for a in e.args)
        return lambda X: np.where(fa(X) >= fb(X), fp(X), fq(X))
    if k in UNARY:
        f = compile_numpy(e.args[0])
        op = _NP_UNARY[k]
        if k == "log":
            return lambda X: op(np.where((v := f(X)) > 0, v, np.nan))
        if k == "sqrt":
            return lambda X: op(np.where((v := f(X)) >= 0, v, np.nan))
        return lambda X: op(f(X))
    fa, fb = (compile_numpy(a) for a in e.args)
    op = _NP_BINARY[k]
    if k == "div":
        return lambda X: op(fa(X), np.where((v := fb(X)) != 0, v, np.nan))
    return lambda X: op(fa(X), fb(X))


def vectorized(e: Expr) -> Callable[[np.ndarray], np.ndarray]:
    """Like :func:`compile_numpy` but silences floating-point warnings."""
    f = compile_numpy(e)

    def run(X):
        X = np.asarray(X, dtype=float)
        with np.errstate(all="ignore"):
            return f(X)

    return run


# --------------------------------------------------------------------------
# Differentiation

_ZERO = const(0.0)
_ONE = const(1.0)


def _is(e: Expr, c: float) -> bool:
    return e.kind == "const" and e.value == c


def _add(a, b):
    if _is(a, 0.0):
        return b
    if _is(b, 0.0):
        return a
    return Expr("add", (a, b))


def _sub(a, b):
    if _is(b, 0.0):
        return a
    if _is(a, 0.0):
        return Expr("neg", (b,))
    return Expr("sub", (a, b))


def _mul(a, b):
    if _is(a, 0.0) or _is(b, 0.0):
        return _ZERO
    if _is(a, 1.0):
        return b
    if _is(b, 1.0):
        return a
    return Expr("mul", (a, b))


def _div(a, b):
    if _is(a, 0.0):
        return _ZERO
    if _is(b, 1.0):
        return a
    return Expr("div", (a, b))


def _neg(a):
    return _ZERO if _is(a, 0.0) else Expr("neg", (a,))


def _select(a, b, p, q):
    if p == q:
        return p
    return Expr("select_ge", (a, b, p, q))


def differentiate(e: Expr, index: int) -> Expr:
    """Symbolic partial derivative of ``e`` with respect to ``x{index}``.

    ``min``/``max``/``abs`` differentiate to the derivative of the branch they
    select at the evaluation point (ties go to the first argument).  Only
    trivial 0/1 identities are folded.
    """
    memo: dict[int, Expr] = {}

    def d(n: Expr) -> Expr:
        key = id(n)
        if key in memo:
            return memo[key]
        out = _d(n)
        memo[key] = out
        return out

    def _d(n: Expr) -> Expr:
        k = n.kind
        if k == "const":
            return _ZERO
        if k == "var":
            return _ONE if n.value == index else _ZERO
        if n.arity < index:
            return _ZERO
        a = n.args[0]
        if k == "neg":
            return _neg(d(a))
        if k in ("add", "sub"):
            b = n.args[1]
            return (_add if k == "add" else _sub)(d(a), d(b))
        if k == "mul":
            b = n.args[1]
            return _add(_mul(d(a), b), _mul(a, d(b)))
        if k == "div":
            b = n.args[1]
            da, db = d(a), d(b)
            return _sub(_div(da, b), _div(_mul(n, db), b))
        if k == "pow":
            m = n.value
            if m == 0:
                return _ZERO
            if m == 1:
                return d(a)
            inner = a if m == 2 else Expr("pow", (a,), m - 1)
            return _mul(_mul(const(float(m)), inner), d(a))
        if k == "exp":
            return _mul(n, d(a))
        if k == "log":
            return _div(d(a), a)
        if k == "tanh":
            return _mul(_sub(_ONE, Expr("pow", (n,), 2)), d(a))
        if k == "sqrt":
            return _div(d(a), _mul(const(2.0), n))
        if k == "abs":
            da = d(a)
            return _select(a, _ZERO, da, _neg(da))
        if k == "max":
            b = n.args[1]
            return _select(a, b, d(a), d(b))
        if k == "min":
            b = n.args[1]
            return _select(b, a, d(a), d(b))
        if k == "select_ge":
            c1, c2, p, q = n.args
            return _select(c1, c2, d(p), d(q))
        raise ValueError(f"cannot differentiate node kind {k!r}")

    return d(e)


def gradient(e: Expr, dims: int | None = None) -> tuple[Expr, ...]:
    dims = e.arity if dims is None else dims
    return tuple(differentiate(e, i) for i in range(1, dims + 1))


def substitute(e: Expr, values: dict[int, float], renumber: dict[int, int] | None = None) -> Expr:
    """Replace ``x{i}`` by constants ``values[i]`` and rename the rest via ``renumber``."""
    renumber = renumber or {}

    def go(n: Expr) -> Expr:
        if n.kind == "var":
            if n.value in values:
                return const(values[n.value])
            return var(renumber.get(n.value, n.value))
        if not n.args:
            return n
        return Expr(n.kind, tuple(go(a) for a in n.args), n.value)

    return go(e)


def affine(coeffs: Sequence[float], offset: float) -> Expr:
    """``c1*x1 + ... + cd*xd + offset`` as an expression tree."""
    node = const(offset)
    for i, c in enumerate(coeffs, start=1):
        node = Expr("add", (Expr("mul", (const(c), var(i))), node))
    return node
