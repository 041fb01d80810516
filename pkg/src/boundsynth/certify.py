"""l-infinity robustness certification on top of bound propagation.

A query is certified when the true class's lower bound strictly exceeds the
upper bound of every other output over the perturbation box.  Anything else is
``Unknown``: the bounds are incomplete, so failure to certify says nothing about
the existence of an adversarial example.
"""

from __future__ import annotations

import enum
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .interval import BoxRegion
from .propagate import Network, forward_bounds
from .soundify import SoundifyConfig

__all__ = [
    "CertOutcome",
    "RobustnessQuery",
    "Certificate",
    "QueryFormatError",
    "certify_linf",
    "certify_batch",
    "adversarial_search",
    "load_queries",
    "summary_line",
]


class CertOutcome(str, enum.Enum):
    CERTIFIED = "Certified"
    UNKNOWN = "Unknown"


class QueryFormatError(ValueError):
    pass


@dataclass(frozen=True)
class RobustnessQuery:
    input: tuple[float, ...]
    epsilon: float
    true_label: int
    perturb_dims: tuple[int, ...] | None = None  # None perturbs every input

    def __post_init__(self):
        x = tuple(float(v) for v in self.input)
        if not np.all(np.isfinite(x)):
            raise ValueError("query input must be finite")
        if not self.epsilon >= 0:
            raise ValueError("epsilon must be non-negative")
        if self.true_label < 0:
            raise ValueError("true_label must be non-negative")
        object.__setattr__(self, "input", x)
        object.__setattr__(self, "epsilon", float(self.epsilon))
        if self.perturb_dims is not None:
            dims = tuple(sorted(set(int(i) for i in self.perturb_dims)))
            if dims and not 0 <= dims[0] <= dims[-1] < len(x):
                raise ValueError(f"perturbed dimensions {dims} out of range for input of length {len(x)}")
            object.__setattr__(self, "perturb_dims", dims)

    def box(self) -> BoxRegion:
        eps = self.epsilon
        dims = range(len(self.input)) if self.perturb_dims is None else self.perturb_dims
        radius = np.zeros(len(self.input))
        radius[list(dims)] = eps
        return BoxRegion.of((x - r, x + r) for x, r in zip(self.input, radius))


@dataclass(frozen=True)
class Certificate:
    outcome: CertOutcome
    output_box: BoxRegion
    margin: float
    wall_ms: float = 0.0

    @property
    def certified(self) -> bool:
        return self.outcome is CertOutcome.CERTIFIED

    def to_dict(self, timing: bool = True) -> dict:
        out = {
            "outcome": self.outcome.value,
            "margin": self.margin,
            "output_box": [[d.lo, d.hi] for d in self.output_box],
        }
        if timing:
            out["wall_ms"] = self.wall_ms
        return out


def certify_linf(
    net: Network, q: RobustnessQuery, cfg: SoundifyConfig = SoundifyConfig(), threads: int = 1
) -> Certificate:
    if len(q.input) != net.input_dim:
        raise ValueError(f"query input has length {len(q.input)}, network expects {net.input_dim}")
    if q.true_label >= net.output_dim:
        raise ValueError(f"true_label {q.true_label} out of range for {net.output_dim} outputs")
    t0 = time.perf_counter()
    _, out = forward_bounds(net, q.box(), cfg, threads=threads)
    lo, hi = np.array(out.lower), np.array(out.upper)
    others = np.delete(hi, q.true_label)
    margin = float(lo[q.true_label] - others.max()) if others.size else float("inf")
    outcome = CertOutcome.CERTIFIED if margin > 0 else CertOutcome.UNKNOWN
    return Certificate(outcome, out, margin, 1e3 * (time.perf_counter() - t0))


def certify_batch(
    net: Network,
    queries: Sequence[RobustnessQuery],
    cfg: SoundifyConfig = SoundifyConfig(),
    threads: int = 1,
) -> list[Certificate]:
    """Certify independent queries, concurrently when ``threads > 1``; results keep query order."""
    if threads <= 1 or len(queries) <= 1:
        return [certify_linf(net, q, cfg) for q in queries]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda q: certify_linf(net, q, cfg), queries))


def summary_line(certs: Sequence[Certificate]) -> str:
    n = len(certs)
    k = sum(c.certified for c in certs)
    frac = k / n if n else 0.0
    return f"certified {k} out of {n} ({frac:.4f})"


def _margins(net: Network, X: np.ndarray, label: int) -> np.ndarray:
    """``f_true - max_other f`` per row; non-positive means misclassified."""
    Y = net(X)
    others = np.delete(Y, label, axis=1)
    return Y[:, label] - others.max(axis=1)


def adversarial_search(
    net: Network,
    q: RobustnessQuery,
    rng: np.random.Generator,
    samples: int = 10_000,
    steps: int = 100,
) -> np.ndarray | None:
    """Look for a misclassified point in the query box.

    Uniform random points (half of them box vertices), then projected
    sign-gradient descent on the classification margin with finite-difference
    gradients, started from the best random point.  Returns a counterexample or
    ``None``.
    """
    box = q.box()
    lo, hi = np.array(box.lower), np.array(box.upper)
    d = lo.size
    if net.output_dim < 2:
        return None
    U = rng.random((samples, d))
    U[: samples // 2] = np.round(U[: samples // 2])
    X = lo + U * (hi - lo)
    m = _margins(net, X, q.true_label)
    j = int(np.argmin(m))
    if m[j] <= 0:
        return X[j]
    x, best = X[j].copy(), m[j]
    width = hi - lo
    if not np.any(width > 0):
        return None
    for k in range(steps):
        h = np.maximum(1e-7 * width, 1e-12)
        probes = np.repeat(x[None, :], 2 * d, axis=0)
        probes[np.arange(d), np.arange(d)] += h
        probes[d + np.arange(d), np.arange(d)] -= h
        pm = _margins(net, np.clip(probes, lo, hi), q.true_label)
        g = (pm[:d] - pm[d:]) / (2 * h)
        step = width * 0.5 * (0.95 ** k)
        cand = np.clip(x - step * np.sign(g), lo, hi)
        cm = _margins(net, cand[None, :], q.true_label)[0]
        if cm <= 0:
            return cand
        if cm < best:
            x, best = cand, cm
    return None


def load_queries(data, epsilon: float, perturb_dims: Sequence[int] | None = None) -> list[RobustnessQuery]:
    """Queries from ``[{"input": [...], "label": k}, ...]`` or ``{"inputs": [...]}``."""
    if isinstance(data, dict):
        if "inputs" not in data:
            raise QueryFormatError("inputs: missing")
        data = data["inputs"]
    if not isinstance(data, list):
        raise QueryFormatError("inputs: expected a list")
    out = []
    for i, item in enumerate(data):
        where = f"inputs[{i}]"
        if not isinstance(item, dict):
            raise QueryFormatError(f"{where}: expected an object")
        if "input" not in item:
            raise QueryFormatError(f"{where}.input: missing")
        if "label" not in item:
            raise QueryFormatError(f"{where}.label: missing")
        x, label = item["input"], item["label"]
        if not isinstance(x, list) or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in x):
            raise QueryFormatError(f"{where}.input: expected a list of numbers")
        if not isinstance(label, int) or isinstance(label, bool) or label < 0:
            raise QueryFormatError(f"{where}.label: expected a non-negative integer")
        try:
            out.append(RobustnessQuery(tuple(x), epsilon, label, perturb_dims))
        except ValueError as exc:
            raise QueryFormatError(f"{where}.input: {exc}") from None
    return out
