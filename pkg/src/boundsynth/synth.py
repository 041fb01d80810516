"""Candidate linear bounds from uniform sampling plus a volume-minimising LP.

The candidate is tight but only guaranteed to dominate the activation at the
sample points; :mod:`boundsynth.soundify` turns it into a sound bound.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .expr import ActivationDef, DomainError, Expr, vectorized
from .interval import BoxRegion
from .lp import LpProblem, Sense, Status, solve_lp

__all__ = [
    "Side",
    "LinearBound",
    "SynthConfig",
    "SampleSet",
    "DegenerateBox",
    "LpFailure",
    "sample_grid",
    "volume_objective",
    "synth_candidate",
]


class Side(str, enum.Enum):
    LOWER = "lower"
    UPPER = "upper"


class DegenerateBox(ValueError):
    pass


class LpFailure(RuntimeError):
    pass


@dataclass(frozen=True)
class LinearBound:
    """``coeffs @ x + offset`` bounding an activation from one side."""

    coeffs: tuple[float, ...]
    offset: float
    side: Side

    def __post_init__(self):
        coeffs = tuple(float(c) for c in self.coeffs)
        if not all(np.isfinite(coeffs)) or not np.isfinite(self.offset):
            raise ValueError("linear bound coefficients must be finite")
        object.__setattr__(self, "coeffs", coeffs)
        object.__setattr__(self, "offset", float(self.offset))
        object.__setattr__(self, "side", Side(self.side))

    @property
    def dims(self) -> int:
        return len(self.coeffs)

    def __call__(self, x: Sequence[float]) -> float:
        return float(np.dot(self.coeffs, x)) + self.offset

    def evaluate(self, X: np.ndarray) -> np.ndarray:
        """Evaluate on points of shape ``(n, d)``."""
        X = np.asarray(X, dtype=float).reshape(-1, self.dims)
        return X @ np.asarray(self.coeffs) + self.offset

    def shifted(self, delta: float) -> "LinearBound":
        return LinearBound(self.coeffs, self.offset + delta, self.side)

    def to_dict(self) -> dict:
        return {"coeffs": list(self.coeffs), "offset": self.offset}


@dataclass(frozen=True)
class SynthConfig:
    samples_per_dim: int | None = None
    endpoint_mode: str = "closed"

    def __post_init__(self):
        if self.samples_per_dim is not None and self.samples_per_dim < 2:
            raise ValueError("samples_per_dim must be at least 2")
        if self.endpoint_mode not in ("closed", "lower-open"):
            raise ValueError("endpoint_mode must be 'closed' or 'lower-open'")

    def per_dim(self, d: int) -> int:
        if self.samples_per_dim is not None:
            return self.samples_per_dim
        return 32 if d <= 1 else 16 if d == 2 else 8


@dataclass(frozen=True)
class SampleSet:
    points: np.ndarray  # shape (n, d)

    def __len__(self) -> int:
        return self.points.shape[0]


def _axis(lo: float, hi: float, n: int, mode: str) -> np.ndarray:
    if lo == hi:
        return np.array([lo])
    if mode == "lower-open":
        return lo + (hi - lo) * np.arange(n) / n
    pts = np.linspace(lo, hi, n)
    pts[-1] = hi
    return pts


def sample_grid(box: BoxRegion | Sequence[Sequence[float]], cfg: SynthConfig = SynthConfig()) -> SampleSet:
    """Cartesian grid of uniformly spaced points, endpoints included by default."""
    bounds = box.as_tuples() if isinstance(box, BoxRegion) else [tuple(b) for b in box]
    n = cfg.per_dim(len(bounds))
    axes = [_axis(lo, hi, n, cfg.endpoint_mode) for lo, hi in bounds]
    if not axes:
        return SampleSet(np.zeros((1, 0)))
    pts = np.array(list(itertools.product(*axes)), dtype=float)
    return SampleSet(pts)


def volume_objective(box: BoxRegion | Sequence[Sequence[float]]) -> np.ndarray:
    """Coefficients of ``c`` in the integral of ``c[:d] @ x + c[d]`` over the box.

    Entry ``i < d`` is ``(u_i^2 - l_i^2) / 2 * prod_{j != i} (u_j - l_j)``; the
    last entry is the box volume.
    """
    bounds = box.as_tuples() if isinstance(box, BoxRegion) else [tuple(map(float, b)) for b in box]
    widths = [hi - lo for lo, hi in bounds]
    if any(w <= 0 for w in widths):
        raise DegenerateBox("volume objective needs a box with positive width in every dimension")
    out = np.empty(len(bounds) + 1)
    for i, (lo, hi) in enumerate(bounds):
        rest = 1.0
        for j, w in enumerate(widths):
            if j != i:
                rest *= w
        # (hi^2 - lo^2)/2 without cancellation
        out[i] = 0.5 * (hi - lo) * (hi + lo) * rest
    out[-1] = float(np.prod(widths)) if widths else 1.0
    return out


def _body(act: ActivationDef | Expr) -> Expr:
    return act.body if isinstance(act, ActivationDef) else act


def synth_candidate(
    act: ActivationDef | Expr,
    box: BoxRegion | Sequence[Sequence[float]],
    side: Side | str,
    cfg: SynthConfig = SynthConfig(),
) -> LinearBound:
    """Solve the sampled LP for an upper (or lower) candidate plane."""
    side = Side(side)
    bounds = box.as_tuples() if isinstance(box, BoxRegion) else [tuple(map(float, b)) for b in box]
    d = len(bounds)
    objective = volume_objective(bounds) if d else np.ones(1)
    samples = sample_grid(bounds, cfg).points
    values = vectorized(_body(act))(samples.T if d else np.zeros((0, 1)))
    values = np.broadcast_to(values, (samples.shape[0],))
    if not np.all(np.isfinite(values)):
        raise DomainError("activation is undefined or overflows at a sample point")
    A = np.hstack([samples, np.ones((samples.shape[0], 1))])
    if side is Side.UPPER:
        problem = LpProblem.from_arrays(objective, A, values, Sense.GE)
    else:
        problem = LpProblem.from_arrays(-objective, A, values, Sense.LE)
    try:
        sol = solve_lp(problem)
    except ArithmeticError as exc:
        raise LpFailure(f"LP solve failed: {exc}") from exc
    if sol.status is not Status.OPTIMAL:
        raise LpFailure(f"candidate LP is {sol.status.value}")
    return LinearBound(tuple(sol.values[:d]), float(sol.values[d]), side)
