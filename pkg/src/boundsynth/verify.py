"""Delta-complete branch-and-bound check of ``v(x) - v_l >= 0`` over a box.

The query is the negation ``exists x in box: v(x) - v_l <= delta``.  A box is
discarded once an interval enclosure of ``w = v - v_l`` has a lower end above
``delta``; a box narrower than ``epsilon`` in every dimension that cannot be
discarded is returned as a (possibly delta-spurious) witness.  An empty
worklist proves the claim.

With the mean-value extension the gradient enclosures also drive a
monotonicity test: if ``dw/dx_i`` has constant sign over a box, the minimum of
``w`` lies on the corresponding face, so the box is collapsed onto it.
"""

from __future__ import annotations

import enum
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

from .interval import (
    BoxRegion,
    IntervalError,
    compile_interval,
    compile_value_and_gradient,
    k_sub,
)
from .minimize import ViolationFn

__all__ = ["Outcome", "VerifyConfig", "VerifyResult", "check_nonneg", "EXTENSIONS"]

log = logging.getLogger(__name__)


class Outcome(str, enum.Enum):
    PROVED = "Proved"
    REFUTED = "Refuted"
    EXHAUSTED = "Exhausted"


def _natural(v: ViolationFn):
    f = compile_interval(v.expr)
    return lambda B: (f(B), None)


def _mean_value(v: ViolationFn):
    return compile_value_and_gradient(v.expr, v.grad)


# Each factory maps a violation to ``B -> (enclosure, gradient enclosures or None)``.
EXTENSIONS: dict[str, Callable[[ViolationFn], Callable]] = {
    "natural": _natural,
    "mean-value": _mean_value,
}


@dataclass(frozen=True)
class VerifyConfig:
    delta: float = 1e-7
    epsilon: float | None = None
    max_boxes: int = 1_000_000
    timeout: float = 5.0
    extension: str = "mean-value"
    monotonicity: bool = True
    trace: bool = False

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if self.epsilon is not None and not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.max_boxes < 1:
            raise ValueError("max_boxes must be at least 1")
        if not self.timeout > 0:
            raise ValueError("timeout must be positive")
        if self.extension not in EXTENSIONS:
            raise ValueError(f"unknown interval extension {self.extension!r}")

    @property
    def eps(self) -> float:
        return 1e3 * self.delta if self.epsilon is None else self.epsilon


@dataclass(frozen=True)
class VerifyResult:
    outcome: Outcome
    witness: BoxRegion | None = None
    reason: str = ""
    boxes: int = 0
    trace: tuple[str, ...] = field(default=(), repr=False)

    @property
    def proved(self) -> bool:
        return self.outcome is Outcome.PROVED


def _split_dim(box: list[tuple[float, float]], scale: Sequence[float]) -> int:
    best, best_w = 0, -1.0
    for i, (lo, hi) in enumerate(box):
        w = (hi - lo) / scale[i]
        if w > best_w:
            best, best_w = i, w
    return best


def _monotone_face(B, slopes):
    """Collapse every dimension on which ``w`` is monotone onto its minimising end."""
    face = None
    for i, g in enumerate(slopes):
        if g is None:
            continue
        if g[0] >= 0.0:
            end = B[i][0]
        elif g[1] <= 0.0:
            end = B[i][1]
        else:
            continue
        if face is None:
            face = list(B)
        face[i] = (end, end)
    return face


def check_nonneg(
    v: ViolationFn,
    box: BoxRegion | Sequence[Sequence[float]],
    v_l: float,
    cfg: VerifyConfig = VerifyConfig(),
) -> VerifyResult:
    """Try to prove ``v(x) - v_l >= 0`` for every ``x`` in ``box``."""
    root = box.as_tuples() if isinstance(box, BoxRegion) else [tuple(map(float, b)) for b in box]
    if len(root) != v.dims:
        raise ValueError(f"box has {len(root)} dimensions, violation has {v.dims}")
    ext = EXTENSIONS[cfg.extension](v)
    delta, eps = cfg.delta, cfg.eps
    shift = (float(v_l), float(v_l))
    # relative widths, so that a wide and a narrow dimension are split fairly
    scale = [max(hi - lo, 1e-300) for lo, hi in root]
    deadline = time.perf_counter() + cfg.timeout
    trace: list[str] = []
    stack = [root]
    popped = 0
    while stack:
        if popped >= cfg.max_boxes:
            return VerifyResult(Outcome.EXHAUSTED, reason="max_boxes", boxes=popped, trace=tuple(trace))
        if (popped & 63) == 0 and time.perf_counter() > deadline:
            return VerifyResult(Outcome.EXHAUSTED, reason="timeout", boxes=popped, trace=tuple(trace))
        B = stack.pop()
        popped += 1
        slopes = None
        try:
            enc, slopes = ext(B)
            w = k_sub(enc, shift)
            domain_error = math.isnan(w[0])
        except (IntervalError, ZeroDivisionError):
            w = (-math.inf, math.inf)
            domain_error = True
        small = all(hi - lo < eps for lo, hi in B)
        if not domain_error and w[0] > delta:
            action = "prune"
        elif small:
            action = "exhausted" if domain_error else "refute"
        else:
            action = "split"
        if cfg.trace:
            line = f"{B} w=[{w[0]!r}, {w[1]!r}] {action}"
            trace.append(line)
            log.debug(line)
        if action == "prune":
            continue
        if action == "split" and slopes is not None and cfg.monotonicity and not domain_error:
            face = _monotone_face(B, slopes)
            if face is not None:
                if cfg.trace:
                    trace.append(f"{B} -> face {face}")
                stack.append(face)
                continue
        if action == "refute":
            return VerifyResult(Outcome.REFUTED, BoxRegion.of(B) if B else None, boxes=popped, trace=tuple(trace))
        if action == "exhausted":
            return VerifyResult(Outcome.EXHAUSTED, reason="domain-error", boxes=popped, trace=tuple(trace))
        i = _split_dim(B, scale)
        lo, hi = B[i]
        mid = 0.5 * (lo + hi)
        left, right = list(B), list(B)
        left[i] = (lo, mid)
        right[i] = (mid, hi)
        # LIFO: the left half is examined first
        stack.append(right)
        stack.append(left)
    return VerifyResult(Outcome.PROVED, boxes=popped, trace=tuple(trace))
