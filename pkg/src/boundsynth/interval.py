"""Outward-rounded interval arithmetic and interval extensions of expressions.

Every primitive widens its result by one representable step per endpoint
(two for the transcendental functions, whose libm results are trusted to be
within one ulp).  This is cheaper and more portable than switching the FPU
rounding mode, and the slack is a few ulps against tolerances of ~1e-7.

The hot path works on plain ``(lo, hi)`` float tuples; :class:`Interval` and
:class:`BoxRegion` are the public, validated wrappers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

from .expr import UNARY, Expr

__all__ = [
    "Interval",
    "BoxRegion",
    "IntervalError",
    "DivisionByZeroInterval",
    "DomainErrorInterval",
    "iv_binary",
    "iv_unary",
    "eval_interval",
    "compile_interval",
    "compile_mean_value",
    "compile_value_and_gradient",
    "set_widening",
]

_INF = math.inf
_nextafter = math.nextafter
_WIDEN = True


def set_widening(enabled: bool) -> bool:
    """Toggle outward widening globally; returns the previous setting.

    Only meant for fault-injection tests: disabling it makes the kernel unsound.
    """
    global _WIDEN
    previous = _WIDEN
    _WIDEN = bool(enabled)
    return previous


class IntervalError(ArithmeticError):
    pass


class DivisionByZeroInterval(IntervalError):
    pass


class DomainErrorInterval(IntervalError):
    pass


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float

    def __post_init__(self):
        lo, hi = float(self.lo), float(self.hi)
        if math.isnan(lo) or math.isnan(hi) or lo > hi:
            raise ValueError(f"invalid interval [{self.lo}, {self.hi}]")
        if not (math.isfinite(lo) and math.isfinite(hi)):
            raise ValueError(f"unbounded interval [{self.lo}, {self.hi}] is not supported")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def width(self) -> float:
        return self.hi - self.lo

    @property
    def mid(self) -> float:
        return 0.5 * (self.lo + self.hi)

    def __contains__(self, x: float) -> bool:
        return self.lo <= x <= self.hi

    def contains(self, other: "Interval") -> bool:
        return self.lo <= other.lo and other.hi <= self.hi

    def as_tuple(self) -> tuple[float, float]:
        return (self.lo, self.hi)

    @classmethod
    def point(cls, x: float) -> "Interval":
        return cls(x, x)


@dataclass(frozen=True)
class BoxRegion:
    dims: tuple[Interval, ...]

    def __post_init__(self):
        dims = tuple(d if isinstance(d, Interval) else Interval(*d) for d in self.dims)
        if not dims:
            raise ValueError("a box needs at least one dimension")
        object.__setattr__(self, "dims", dims)

    @classmethod
    def of(cls, bounds: Iterable[Sequence[float]]) -> "BoxRegion":
        return cls(tuple(Interval(float(lo), float(hi)) for lo, hi in bounds))

    def __len__(self) -> int:
        return len(self.dims)

    def __iter__(self):
        return iter(self.dims)

    def __getitem__(self, i: int) -> Interval:
        return self.dims[i]

    @property
    def lower(self) -> list[float]:
        return [d.lo for d in self.dims]

    @property
    def upper(self) -> list[float]:
        return [d.hi for d in self.dims]

    @property
    def widths(self) -> list[float]:
        return [d.width for d in self.dims]

    @property
    def center(self) -> list[float]:
        return [d.mid for d in self.dims]

    def as_tuples(self) -> list[tuple[float, float]]:
        return [(d.lo, d.hi) for d in self.dims]

    def contains_point(self, x: Sequence[float]) -> bool:
        return all(d.lo <= xi <= d.hi for d, xi in zip(self.dims, x))


# --------------------------------------------------------------------------
# Kernel on (lo, hi) tuples


def _down(x: float) -> float:
    return _nextafter(x, -_INF) if _WIDEN else x


def _up(x: float) -> float:
    return _nextafter(x, _INF) if _WIDEN else x


def _down2(x: float) -> float:
    return _nextafter(_nextafter(x, -_INF), -_INF) if _WIDEN else x


def _up2(x: float) -> float:
    return _nextafter(_nextafter(x, _INF), _INF) if _WIDEN else x


def _prod(x: float, y: float) -> float:
    # 0 * inf only arises from overflowed endpoints of finite quantities
    if x == 0.0 or y == 0.0:
        return 0.0
    return x * y


def k_add(a, b):
    return (_down(a[0] + b[0]), _up(a[1] + b[1]))


def k_sub(a, b):
    return (_down(a[0] - b[1]), _up(a[1] - b[0]))


def k_mul(a, b):
    al, ah = a
    bl, bh = b
    if al >= 0.0 and bl >= 0.0:
        return (_down(_prod(al, bl)), _up(_prod(ah, bh)))
    p = (_prod(al, bl), _prod(al, bh), _prod(ah, bl), _prod(ah, bh))
    return (_down(min(p)), _up(max(p)))


def k_div(a, b):
    bl, bh = b
    if bl <= 0.0 <= bh:
        raise DivisionByZeroInterval(f"division by an interval containing zero [{bl}, {bh}]")
    al, ah = a
    q = (al / bl, al / bh, ah / bl, ah / bh)
    return (_down(min(q)), _up(max(q)))


def k_min(a, b):
    return (_down(min(a[0], b[0])), _up(min(a[1], b[1])))


def k_max(a, b):
    return (_down(max(a[0], b[0])), _up(max(a[1], b[1])))


def k_neg(a):
    return (_down(-a[1]), _up(-a[0]))


def k_abs(a):
    lo, hi = a
    if lo >= 0.0:
        r = (lo, hi)
    elif hi <= 0.0:
        r = (-hi, -lo)
    else:
        r = (0.0, max(-lo, hi))
    return (_down(r[0]), _up(r[1]))


def _exp(x: float) -> float:
    try:
        return math.exp(x)
    except OverflowError:
        return _INF


def k_exp(a):
    return (_down2(_exp(a[0])), _up2(_exp(a[1])))


def k_log(a):
    if not a[0] > 0.0:
        raise DomainErrorInterval(f"log over interval with non-positive lower end {a[0]}")
    return (_down2(math.log(a[0])), _up2(math.log(a[1])))


def k_tanh(a):
    return (_down2(math.tanh(a[0])), _up2(math.tanh(a[1])))


def k_sqrt(a):
    if a[0] < 0.0:
        raise DomainErrorInterval(f"sqrt over interval with negative lower end {a[0]}")
    return (_down(math.sqrt(a[0])), _up(math.sqrt(a[1])))


def _pw(x: float, k: int) -> float:
    try:
        return x**k
    except OverflowError:
        return _INF if x > 0 or k % 2 == 0 else -_INF


def k_pow(a, k: int):
    if k == 0:
        return (_down(1.0), _up(1.0))
    lo, hi = a
    if k % 2 == 1 or lo >= 0.0:
        r = (_pw(lo, k), _pw(hi, k))
    elif hi <= 0.0:
        r = (_pw(hi, k), _pw(lo, k))
    else:
        r = (0.0, _pw(max(-lo, hi), k))
    return (_down2(r[0]), _up2(r[1]))


def k_hull(a, b):
    return (min(a[0], b[0]), max(a[1], b[1]))


_K_UNARY = {
    "neg": k_neg,
    "exp": k_exp,
    "log": k_log,
    "tanh": k_tanh,
    "sqrt": k_sqrt,
    "abs": k_abs,
}
_K_BINARY = {
    "add": k_add,
    "sub": k_sub,
    "mul": k_mul,
    "div": k_div,
    "min": k_min,
    "max": k_max,
}


def iv_binary(op: str, a: Interval, b: Interval) -> Interval:
    return Interval(*_K_BINARY[op](a.as_tuple(), b.as_tuple()))


def iv_unary(op: str, a: Interval, k: int | None = None) -> Interval:
    if op.startswith("pow"):
        if k is None:
            k = int(op[3:].lstrip("_"))
        return Interval(*k_pow(a.as_tuple(), k))
    return Interval(*_K_UNARY[op](a.as_tuple()))


# --------------------------------------------------------------------------
# Interval extensions

IntervalFn = Callable[[Sequence[tuple[float, float]]], tuple[float, float]]


def compile_interval(e: Expr) -> IntervalFn:
    """Natural interval extension of ``e`` as a closure over a list of (lo, hi)."""
    k = e.kind
    if k == "const":
        c = e.value
        return lambda B: (c, c)
    if k == "var":
        i = e.value - 1
        return lambda B: B[i]
    if k == "pow":
        f = compile_interval(e.args[0])
        n = e.value
        return lambda B: k_pow(f(B), n)
    if k == "select_ge":
        fa, fb, fp, fq = (compile_interval(a) for a in e.args)

        def select(B):
            a, b = fa(B), fb(B)
            if a[0] >= b[1]:
                return fp(B)
            if a[1] < b[0]:
                return fq(B)
            return k_hull(fp(B), fq(B))

        return select
    if k in UNARY:
        f = compile_interval(e.args[0])
        op = _K_UNARY[k]
        return lambda B: op(f(B))
    fa, fb = (compile_interval(a) for a in e.args)
    op = _K_BINARY[k]
    return lambda B: op(fa(B), fb(B))


def compile_mean_value(value: Expr, grad: Sequence[Expr]) -> IntervalFn:
    """Mean-value (centered) form ``f(m) + sum_i f_i'(B) * (B_i - m_i)``.

    ``grad`` must enclose the partial derivatives over any box; for
    ``min``/``max``/``abs`` the ``select_ge`` hull provides that.  The result is
    intersected with the natural extension, so it is never wider than either.
    """
    both = compile_value_and_gradient(value, grad)
    return lambda B: both(B)[0]


def compile_value_and_gradient(value: Expr, grad: Sequence[Expr]):
    """Closure returning ``(mean-value enclosure, per-dimension gradient enclosures)``.

    Degenerate dimensions get ``None`` in place of a gradient enclosure.
    """
    f_nat = compile_interval(value)
    gs = [compile_interval(g) for g in grad]

    def both(B):
        nat = f_nat(B)
        mid = [(0.5 * (lo + hi),) * 2 for lo, hi in B]
        acc = f_nat(mid)
        slopes = []
        for i, g in enumerate(gs):
            lo, hi = B[i]
            if lo == hi:
                slopes.append(None)
                continue
            m = mid[i][0]
            gi = g(B)
            slopes.append(gi)
            acc = k_add(acc, k_mul(gi, (_down(lo - m), _up(hi - m))))
        return (max(nat[0], acc[0]), min(nat[1], acc[1])), slopes

    return both


def _as_tuples(box) -> list[tuple[float, float]]:
    if isinstance(box, BoxRegion):
        return box.as_tuples()
    return [(float(lo), float(hi)) for lo, hi in box]


def eval_interval(e: Expr, box: BoxRegion | Sequence[Sequence[float]]) -> Interval:
    """Enclosure of ``{e(x) : x in box}`` via the natural interval extension."""
    B = _as_tuples(box)
    if len(B) < e.arity:
        raise ValueError(f"box has {len(B)} dimensions, expression needs {e.arity}")
    lo, hi = compile_interval(e)(B)
    if not (math.isfinite(lo) and math.isfinite(hi)):
        raise DomainErrorInterval(f"interval evaluation is not finite: [{lo}, {hi}]")
    return Interval(lo, hi)
