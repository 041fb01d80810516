"""Violation functions and a multi-start box-constrained local minimizer.

The minimizer only has to produce a good estimate of ``min v`` over the box;
the verifier decides soundness.  For the 1-3 dimensional problems here a
spectral (Barzilai-Borwein) projected gradient with Armijo backtracking,
started from a grid, converges in a handful of iterations.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .expr import ActivationDef, DomainError, Expr, affine, compile_scalar, gradient, vectorized
from .interval import BoxRegion
from .synth import LinearBound, Side

__all__ = ["ViolationFn", "MinimizeConfig", "build_violation", "local_min"]

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class ViolationFn:
    """``plane - sigma`` (upper side) or ``sigma - plane`` (lower side).

    Negative values mark points where the bound is unsound.
    """

    expr: Expr
    grad: tuple[Expr, ...]
    dims: int
    side: Side
    _vec: Callable = field(repr=False, compare=False, default=None)
    _vec_grad: tuple = field(repr=False, compare=False, default=None)
    _scalar: Callable = field(repr=False, compare=False, default=None)

    def __post_init__(self):
        if len(self.grad) != self.dims or self.expr.arity > self.dims:
            raise ValueError("gradient length and arity must match the violation's dimension")
        object.__setattr__(self, "_vec", vectorized(self.expr))
        object.__setattr__(self, "_vec_grad", tuple(vectorized(g) for g in self.grad))
        object.__setattr__(self, "_scalar", compile_scalar(self.expr))

    def __call__(self, x: Sequence[float]) -> float:
        try:
            return float(self._scalar(list(map(float, x))))
        except (DomainError, ZeroDivisionError, ValueError, OverflowError):
            return math.inf

    def values(self, X: np.ndarray) -> np.ndarray:
        """Evaluate at points of shape ``(n, d)``; invalid points map to ``+inf``."""
        X = np.asarray(X, dtype=float).reshape(-1, self.dims)
        out = np.broadcast_to(self._vec(X.T if self.dims else np.zeros((0, X.shape[0]))), (X.shape[0],))
        return np.where(np.isnan(out), np.inf, out)

    def gradients(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float).reshape(-1, self.dims)
        cols = [np.broadcast_to(g(X.T), (X.shape[0],)) for g in self._vec_grad]
        G = np.stack(cols, axis=1) if cols else np.zeros((X.shape[0], 0))
        return np.where(np.isfinite(G), G, 0.0)


@dataclass(frozen=True)
class MinimizeConfig:
    starts_per_dim: int | None = None
    max_iters: int = 200
    gradient_tol: float = 1e-10
    shrink: float = 0.5
    probe_per_dim: int | None = None
    refine_iters: int = 50
    # a start stops once an iteration improves it by less than this; far below
    # the slack that the soundness shift adds anyway
    value_tol: float = 1e-13

    def __post_init__(self):
        for name in ("max_iters", "gradient_tol", "shrink", "refine_iters", "value_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not self.shrink < 1:
            raise ValueError("shrink must be below 1")
        if self.starts_per_dim is not None and self.starts_per_dim < 1:
            raise ValueError("starts_per_dim must be positive")
        if self.probe_per_dim is not None and self.probe_per_dim < 2:
            raise ValueError("probe_per_dim must be at least 2")

    def starts(self, d: int) -> int:
        if self.starts_per_dim is not None:
            return self.starts_per_dim
        return 10 if d <= 1 else 5

    def probes(self, d: int) -> int:
        if self.probe_per_dim is not None:
            return self.probe_per_dim
        return 64 if d <= 1 else 24 if d == 2 else 10


def build_violation(act: ActivationDef | Expr, bound: LinearBound, dims: int | None = None) -> ViolationFn:
    body = act.body if isinstance(act, ActivationDef) else act
    d = bound.dims if dims is None else dims
    if isinstance(act, ActivationDef) and act.arity != bound.dims:
        raise ValueError(f"bound has {bound.dims} coefficients, activation arity is {act.arity}")
    plane = affine(bound.coeffs, bound.offset)
    side = Side(bound.side)
    expr = Expr("sub", (plane, body)) if side is Side.UPPER else Expr("sub", (body, plane))
    return ViolationFn(expr, gradient(expr, d), d, side)


def _grid(lo: np.ndarray, hi: np.ndarray, n: int) -> np.ndarray:
    axes = [np.array([a]) if a == b else np.linspace(a, b, n) for a, b in zip(lo, hi)]
    return np.array(list(itertools.product(*axes)), dtype=float).reshape(-1, len(lo))


def _spg(v: ViolationFn, X: np.ndarray, lo, hi, radius: np.ndarray, cfg: MinimizeConfig):
    """Vectorized spectral projected gradient from every row of ``X``.

    Steps are capped at ``radius`` per coordinate so each start stays in its
    own basin; otherwise one long step can jump past a narrow kink minimum.
    """
    F = v.values(X)
    G = v.gradients(X)
    k = X.shape[0]
    pg = np.clip(X - G, lo, hi) - X
    alpha = 1.0 / np.maximum(np.abs(pg).max(axis=1), 1e-12)
    active = np.isfinite(F)
    converged = np.zeros(k, dtype=bool)
    for _ in range(cfg.max_iters):
        pgn = np.abs(np.clip(X - G, lo, hi) - X).max(axis=1)
        converged |= pgn <= cfg.gradient_tol
        active &= ~converged
        if not active.any():
            break
        idx = np.flatnonzero(active)
        Xa, Fa, Ga = X[idx], F[idx], G[idx]
        D = np.clip(np.clip(Xa - alpha[idx, None] * Ga, lo, hi) - Xa, -radius, radius)
        slope = np.sum(Ga * D, axis=1)
        lam = np.ones(idx.size)
        accepted = np.zeros(idx.size, dtype=bool)
        Xn, Fn = Xa.copy(), Fa.copy()
        pending = np.arange(idx.size)
        for _ in range(40):
            trial = np.clip(Xa[pending] + lam[pending, None] * D[pending], lo, hi)
            Ft = v.values(trial)
            ok = Ft <= Fa[pending] + 1e-4 * lam[pending] * slope[pending]
            hit = pending[ok]
            Xn[hit], Fn[hit] = trial[ok], Ft[ok]
            accepted[hit] = True
            pending = pending[~ok]
            if pending.size == 0:
                break
            lam[pending] *= cfg.shrink
        stalled = ~accepted
        Gn = v.gradients(Xn)
        S = Xn - Xa
        Y = Gn - Ga
        sy = np.sum(S * Y, axis=1)
        ss = np.sum(S * S, axis=1)
        new_alpha = np.where(sy > 0, ss / np.where(sy > 0, sy, 1.0), 1e12)
        alpha[idx] = np.clip(new_alpha, 1e-12, 1e12)
        X[idx], F[idx], G[idx] = Xn, Fn, Gn
        tiny = np.abs(S).max(axis=1) <= 1e-15 * (1.0 + np.abs(Xa).max(axis=1))
        flat = Fa - Fn <= cfg.value_tol
        converged[idx[flat & accepted]] = True
        active[idx[stalled | tiny | flat]] = False
    return X, F, converged


def _golden_refine(v: ViolationFn, x: np.ndarray, fx: float, lo, hi, h: np.ndarray, iters: int):
    """Golden-section search along each coordinate in ``[x_i - h_i, x_i + h_i]``."""
    x = x.copy()
    for i in range(x.size):
        a, b = max(lo[i], x[i] - h[i]), min(hi[i], x[i] + h[i])
        if not b > a:
            continue

        def f(t):
            y = x.copy()
            y[i] = t
            return v(y)

        c = b - _GOLDEN * (b - a)
        e = a + _GOLDEN * (b - a)
        fc, fe = f(c), f(e)
        for _ in range(iters):
            if fc <= fe:
                b, e, fe = e, c, fc
                c = b - _GOLDEN * (b - a)
                fc = f(c)
            else:
                a, c, fc = c, e, fe
                e = a + _GOLDEN * (b - a)
                fe = f(e)
        for t in (a, b, c, e):
            ft = f(t)
            if ft < fx:
                x[i], fx = t, ft
    return x, fx


def local_min(
    v: ViolationFn, box: BoxRegion | Sequence[Sequence[float]], cfg: MinimizeConfig = MinimizeConfig()
) -> tuple[np.ndarray, float]:
    """Best ``(point, value)`` found for ``min v`` over ``box``."""
    bounds = box.as_tuples() if isinstance(box, BoxRegion) else [tuple(map(float, b)) for b in box]
    d = len(bounds)
    if d != v.dims:
        raise ValueError(f"box has {d} dimensions, violation has {v.dims}")
    if d == 0:
        return np.zeros(0), v([])
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])

    probe = _grid(lo, hi, cfg.probes(d))
    pf = v.values(probe)
    starts = _grid(lo, hi, cfg.starts(d))
    X0 = np.vstack([starts, probe[np.argmin(pf)]])
    f0 = v.values(X0)
    radius = (hi - lo) / max(cfg.starts(d) - 1, 1)
    X, F, converged = _spg(v, X0.copy(), lo, hi, radius, cfg)

    candidates = [(pf, probe), (f0, X0), (F, X)]
    best_val, best_x = math.inf, X0[0]
    for vals, pts in candidates:
        j = int(np.argmin(vals))
        if vals[j] < best_val:
            best_val, best_x = float(vals[j]), pts[j]
    j = int(np.argmin(F))
    if not converged[j] or F[j] > best_val:
        h = (hi - lo) / max(cfg.probes(d) - 1, 1)
        best_x, best_val = _golden_refine(v, best_x, best_val, lo, hi, h, cfg.refine_iters)
    return np.asarray(best_x, dtype=float), float(best_val)
