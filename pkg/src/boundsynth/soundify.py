"""Sound linear relaxations: candidate plane, estimated violation, verified shift."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .expr import ActivationDef, DomainError, Expr, substitute
from .interval import BoxRegion, IntervalError, compile_interval
from .minimize import MinimizeConfig, ViolationFn, build_violation, local_min
from .synth import LinearBound, LpFailure, Side, SynthConfig, synth_candidate
from .verify import Outcome, VerifyConfig, check_nonneg

__all__ = [
    "SoundifyConfig",
    "SideCertificate",
    "LinearRelaxation",
    "RetryExhausted",
    "RelaxationDomainError",
    "bound_violation",
    "make_sound",
    "synthesize_relaxation",
]


class RetryExhausted(RuntimeError):
    pass


class RelaxationDomainError(ValueError):
    """The activation is undefined somewhere on the requested box."""


@dataclass(frozen=True)
class SoundifyConfig:
    synth: SynthConfig = field(default_factory=SynthConfig)
    minimize: MinimizeConfig = field(default_factory=MinimizeConfig)
    verify: VerifyConfig = field(default_factory=VerifyConfig)
    decrement: float = 1e-6
    slack: float = 1e-6
    max_retries: int = 1000

    def __post_init__(self):
        if not self.decrement > 0:
            raise ValueError("decrement must be positive")
        if not self.slack >= 0:
            raise ValueError("slack must be non-negative")
        if self.max_retries < 0:
            raise ValueError("max_retries must be non-negative")


@dataclass(frozen=True)
class SideCertificate:
    v_l: float | None
    outcome: str
    fallback: bool
    retries: int
    wall_ms: float

    def to_dict(self, timing: bool = True) -> dict:
        out = {"v_l": self.v_l, "outcome": self.outcome, "fallback": self.fallback, "retries": self.retries}
        if timing:
            out["wall_ms"] = self.wall_ms
        return out


@dataclass(frozen=True)
class LinearRelaxation:
    lower: LinearBound
    upper: LinearBound
    box: BoxRegion
    certificate: dict[str, SideCertificate]

    @property
    def sound_by_construction(self) -> bool:
        return all(c.outcome == Outcome.PROVED.value or c.fallback for c in self.certificate.values())

    def to_dict(self, timing: bool = True) -> dict:
        return {
            "box": [[d.lo, d.hi] for d in self.box],
            "lower": self.lower.to_dict(),
            "upper": self.upper.to_dict(),
            "certificate": {k: c.to_dict(timing) for k, c in self.certificate.items()},
        }


def bound_violation(
    v: ViolationFn, box: Sequence[Sequence[float]] | BoxRegion, cfg: SoundifyConfig = SoundifyConfig(), estimate=None
) -> tuple[float, int]:
    """Verified lower bound on ``v`` over ``box`` and the number of extra decrements.

    ``estimate`` overrides the local-minimizer estimate (used for testing the
    retry loop).
    """
    if estimate is None:
        _, estimate = local_min(v, box, cfg.minimize)
    if not np.isfinite(estimate):
        raise RetryExhausted("violation could not be evaluated on the box")
    v_l = estimate - cfg.slack - 2.0 * cfg.verify.delta
    for retries in range(cfg.max_retries + 1):
        result = check_nonneg(v, box, v_l, cfg.verify)
        if result.outcome is Outcome.PROVED:
            return v_l, retries
        if result.outcome is Outcome.EXHAUSTED:
            raise RetryExhausted(f"verifier exhausted ({result.reason})")
        v_l -= cfg.decrement
    raise RetryExhausted(f"no verified bound after {cfg.max_retries} decrements")


def _make_sound(body: Expr, bounds, side: Side, cfg: SoundifyConfig) -> tuple[LinearBound, float, int]:
    cand = synth_candidate(body, bounds, side, cfg.synth)
    v = build_violation(body, cand, len(bounds))
    v_l, retries = bound_violation(v, bounds, cfg)
    # upper: raise by -v_l; lower: lower by -v_l
    shift = -v_l if side is Side.UPPER else v_l
    return cand.shifted(shift), v_l, retries


def _tuples(box) -> list[tuple[float, float]]:
    if isinstance(box, BoxRegion):
        return box.as_tuples()
    return [tuple(map(float, b)) for b in box]


def make_sound(
    act: ActivationDef | Expr, box, side: Side | str, cfg: SoundifyConfig = SoundifyConfig()
) -> LinearBound:
    """Sound bound for one side on a box with positive width in every dimension."""
    body = act.body if isinstance(act, ActivationDef) else act
    bound, _, _ = _make_sound(body, _tuples(box), Side(side), cfg)
    return bound


def _project(body: Expr, bounds: list[tuple[float, float]]):
    keep = [i for i, (lo, hi) in enumerate(bounds) if hi > lo]
    fixed = {i + 1: lo for i, (lo, hi) in enumerate(bounds) if not hi > lo}
    renumber = {i + 1: k + 1 for k, i in enumerate(keep)}
    projected = substitute(body, fixed, renumber) if fixed else body
    return projected, keep, [bounds[i] for i in keep]


def _embed(bound: LinearBound, keep: list[int], d: int) -> LinearBound:
    coeffs = [0.0] * d
    for k, i in enumerate(keep):
        coeffs[i] = bound.coeffs[k]
    return LinearBound(tuple(coeffs), bound.offset, bound.side)


def synthesize_relaxation(
    act: ActivationDef | Expr, box, cfg: SoundifyConfig = SoundifyConfig()
) -> LinearRelaxation:
    """Sound lower and upper planes for ``act`` over ``box``.

    A side whose verification cannot be completed falls back to the constant
    bound given by the interval enclosure of the activation (flagged in the
    certificate).
    """
    body = act.body if isinstance(act, ActivationDef) else act
    bounds = _tuples(box)
    d = len(bounds)
    if body.arity > d:
        raise ValueError(f"box has {d} dimensions, activation needs {body.arity}")
    region = BoxRegion.of(bounds)
    try:
        enclosure = compile_interval(body)(bounds)
    except (IntervalError, ZeroDivisionError) as exc:
        raise RelaxationDomainError(f"activation undefined on {bounds}: {exc}") from exc
    if not (np.isfinite(enclosure[0]) and np.isfinite(enclosure[1])):
        raise RelaxationDomainError(f"activation unbounded on {bounds}")

    projected, keep, sub = _project(body, bounds)
    sides: dict[Side, LinearBound] = {}
    certs: dict[str, SideCertificate] = {}
    for side in (Side.LOWER, Side.UPPER):
        t0 = time.perf_counter()
        try:
            bound, v_l, retries = _make_sound(projected, sub, side, cfg)
            sides[side] = _embed(bound, keep, d)
            cert = SideCertificate(v_l, Outcome.PROVED.value, False, retries, 0.0)
        except (RetryExhausted, LpFailure, DomainError) as exc:
            const = enclosure[1] if side is Side.UPPER else enclosure[0]
            sides[side] = LinearBound((0.0,) * d, const, side)
            cert = SideCertificate(None, f"Fallback: {exc}", True, 0, 0.0)
        wall = 1e3 * (time.perf_counter() - t0)
        certs[side.value] = SideCertificate(cert.v_l, cert.outcome, cert.fallback, cert.retries, wall)
    return LinearRelaxation(sides[Side.LOWER], sides[Side.UPPER], region, certs)
