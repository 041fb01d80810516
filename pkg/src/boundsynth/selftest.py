"""Built-in property suite: Monte-Carlo soundness, volume formula, LP oracle.

Every check is seeded, and the artifact written by :func:`run` holds no timing
data, so two runs with the same seed produce byte-identical output.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable

import mpmath
import numpy as np

from . import presets
from .expr import Expr, vectorized
from .interval import IntervalError, compile_interval
from .lp import LpProblem, Sense, Status, brute_force_lp, solve_lp
from .soundify import SoundifyConfig, synthesize_relaxation
from .synth import volume_objective

__all__ = ["SuiteConfig", "CheckResult", "random_box", "mc_violations", "run", "CHECKS"]


@dataclass(frozen=True)
class SuiteConfig:
    seed: int = 20220
    boxes_1d: int = 100
    boxes_2d: int = 50
    mc_points: int = 100_000
    volume_boxes: int = 200
    lp_problems: int = 200
    enclosure_points: int = 200
    soundify: SoundifyConfig = field(default_factory=SoundifyConfig)

    @classmethod
    def quick(cls, seed: int = 20220) -> "SuiteConfig":
        return cls(seed=seed, boxes_1d=8, boxes_2d=3, mc_points=10_000, volume_boxes=50, lp_problems=50, enclosure_points=50)


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: dict

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": self.passed, "detail": self.detail}


def random_box(rng: np.random.Generator, d: int) -> list[tuple[float, float]]:
    """Widths uniform in [0.1, 10], centers uniform in [-5, 5]."""
    c = rng.uniform(-5.0, 5.0, d)
    w = rng.uniform(0.1, 10.0, d)
    return [(float(a - b / 2), float(a + b / 2)) for a, b in zip(c, w)]


def mc_violations(body: Expr, relax, rng: np.random.Generator, n: int) -> int:
    """Points where ``lower(x) <= sigma(x) <= upper(x)`` fails, out of ``n`` uniform samples."""
    lo = np.array(relax.box.lower)
    hi = np.array(relax.box.upper)
    X = lo + rng.random((n, lo.size)) * (hi - lo)
    s = vectorized(body)(X.T)
    up = relax.upper.evaluate(X)
    low = relax.lower.evaluate(X)
    bad = ~((low <= s) & (s <= up))
    return int(np.count_nonzero(bad))


# --------------------------------------------------------------------------
# high-precision reference for the interval kernel


def _mp_eval(e: Expr, x) -> mpmath.mpf:
    k = e.kind
    if k == "const":
        return mpmath.mpf(e.value)
    if k == "var":
        return mpmath.mpf(x[e.value - 1])
    a = [_mp_eval(c, x) for c in e.args]
    if k == "pow":
        return a[0] ** e.value
    if k == "select_ge":
        return a[2] if a[0] >= a[1] else a[3]
    ops: dict[str, Callable] = {
        "neg": lambda u: -u,
        "exp": mpmath.exp,
        "log": mpmath.log,
        "tanh": mpmath.tanh,
        "sqrt": mpmath.sqrt,
        "abs": abs,
        "add": lambda u, v: u + v,
        "sub": lambda u, v: u - v,
        "mul": lambda u, v: u * v,
        "div": lambda u, v: u / v,
        "min": min,
        "max": max,
    }
    return ops[k](*a)


def check_enclosure(rng: np.random.Generator, n: int) -> CheckResult:
    """Interval images of point boxes must contain the exact value (60-digit reference)."""
    misses = []
    with mpmath.workdps(60):
        for name, act in presets.PRESETS.items():
            f = compile_interval(act.body)
            for _ in range(n):
                x = [float(v) for v in rng.uniform(-6.0, 6.0, act.arity)]
                try:
                    lo, hi = f([(v, v) for v in x])
                except IntervalError:
                    continue
                ref = _mp_eval(act.body, x)
                if not (mpmath.mpf(lo) <= ref <= mpmath.mpf(hi)):
                    misses.append({"preset": name, "point": x})
    return CheckResult("interval-enclosure", not misses, {"misses": len(misses), "first": misses[:3]})


def check_soundness(cfg: SuiteConfig, rng: np.random.Generator) -> tuple[CheckResult, list[dict]]:
    records = []
    total_bad = 0
    fallbacks = 0
    jobs = [(n, 1, cfg.boxes_1d) for n in presets.ONE_D] + [(n, 2, cfg.boxes_2d) for n in presets.TWO_D]
    per_preset = {}
    for name, d, count in jobs:
        act = presets.get(name)
        bad = 0
        for _ in range(count):
            box = random_box(rng, d)
            relax = synthesize_relaxation(act, box, cfg.soundify)
            v = mc_violations(act.body, relax, rng, cfg.mc_points)
            bad += v
            fallbacks += sum(c.fallback for c in relax.certificate.values())
            rec = {"preset": name, "violations": v}
            rec.update(relax.to_dict(timing=False))
            records.append(rec)
        per_preset[name] = bad
        total_bad += bad
    detail = {"violations": total_bad, "per_preset": per_preset, "fallback_sides": fallbacks, "mc_points": cfg.mc_points}
    return CheckResult("mc-soundness", total_bad == 0, detail), records


def _gauss_integral(c: np.ndarray, box) -> float:
    nodes, weights = np.polynomial.legendre.leggauss(3)
    total = 0.0
    for idx in itertools.product(range(3), repeat=len(box)):
        x = np.array([0.5 * (lo + hi) + 0.5 * (hi - lo) * nodes[i] for (lo, hi), i in zip(box, idx)])
        w = np.prod([0.5 * (hi - lo) * weights[i] for (lo, hi), i in zip(box, idx)])
        total += w * (c[:-1] @ x + c[-1])
    return float(total)


def check_volume(cfg: SuiteConfig, rng: np.random.Generator) -> CheckResult:
    worst = 0.0
    for _ in range(cfg.volume_boxes):
        d = int(rng.integers(1, 4))
        box = random_box(rng, d)
        c = rng.normal(size=d + 1)
        closed = float(volume_objective(box) @ c)
        quad = _gauss_integral(c, box)
        scale = float(np.abs(volume_objective(box)) @ np.abs(c))
        worst = max(worst, abs(closed - quad) / scale)
    return CheckResult("volume-vs-quadrature", worst <= 1e-8, {"worst_relative_error": worst})


def check_lp(cfg: SuiteConfig, rng: np.random.Generator) -> CheckResult:
    mismatches = 0
    # the sigmoid sample-set example
    s = np.array([-1.0, 0.25, 1.5, 2.75])
    sig = 1.0 / (1.0 + np.exp(-s))
    A = np.column_stack([s, np.ones_like(s)])
    obj = volume_objective([(-1.0, 3.5)])
    example = solve_lp(LpProblem.from_arrays(obj, A, sig, Sense.GE))
    ref = brute_force_lp(obj, A, sig, ">=")
    example_ok = example.optimal and ref is not None and np.allclose(example.values, ref[1], atol=1e-9)
    for _ in range(cfg.lp_problems):
        n = int(rng.integers(1, 4))
        m = int(rng.integers(n + 1, 10))
        A = rng.normal(size=(m, n))
        b = rng.normal(size=m)
        c = rng.normal(size=n)
        sense = ">=" if rng.random() < 0.5 else "<="
        ref = brute_force_lp(c, A, b, sense)
        sol = solve_lp(LpProblem.from_arrays(c, A, b, sense))
        if ref is None:
            # no feasible vertex: either infeasible or unbounded without vertices
            mismatches += sol.status is Status.OPTIMAL
        elif sol.status is Status.OPTIMAL:
            mismatches += abs(sol.objective - ref[0]) > 1e-7 * (1 + abs(ref[0]))
        # an unbounded LP may still have feasible vertices; brute force cannot tell
    detail = {"example": [float(v) for v in example.values] if example_ok else None, "mismatches": int(mismatches)}
    return CheckResult("lp-oracle", bool(example_ok) and mismatches == 0, detail)


CHECKS = ("interval-enclosure", "mc-soundness", "volume-vs-quadrature", "lp-oracle")


def run(cfg: SuiteConfig = SuiteConfig()) -> tuple[list[CheckResult], dict]:
    """Run every check; returns the results and the artifact dictionary."""
    root = np.random.SeedSequence(cfg.seed)
    r_enc, r_mc, r_vol, r_lp = (np.random.default_rng(s) for s in root.spawn(4))
    results = [check_enclosure(r_enc, cfg.enclosure_points)]
    mc, records = check_soundness(cfg, r_mc)
    results += [mc, check_volume(cfg, r_vol), check_lp(cfg, r_lp)]
    artifact = {
        "seed": cfg.seed,
        "checks": [r.to_dict() for r in results],
        "relaxations": records,
    }
    return results, artifact
