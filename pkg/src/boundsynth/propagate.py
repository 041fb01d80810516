"""Layer-by-layer linear bound propagation with full back-substitution.

Layer ``0`` holds the input variables and layer ``k`` the outputs of
``net.layers[k - 1]``.  Every layer ``k >= 1`` is related to layer ``k - 1`` by
a pair of affine maps ``L_k x + l_k <= x_k <= U_k x + u_k``: the weight matrix
itself for dense layers, and a diagonal built from synthesized relaxations for
activation layers.  Concrete neuron intervals come from substituting these
relations back down to the input box.

Dense products are ordinary floating point.  Instead of interval-rounding them,
each substitution step adds the standard a-priori error bound for a dot product
of length ``n`` (``gamma_n`` times the sum of absolute terms).
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .expr import ActivationDef, ExprError, gradient, vectorized
from .interval import BoxRegion, Interval, compile_value_and_gradient, k_hull
from .presets import PRESETS, get as get_preset
from .soundify import LinearRelaxation, RelaxationDomainError, SoundifyConfig, synthesize_relaxation

__all__ = [
    "Dense",
    "Activation",
    "Network",
    "NetworkFormatError",
    "SymbolicBound",
    "LayerRelation",
    "NeuronBounds",
    "RelaxationDomainError",
    "back_substitute",
    "forward_bounds",
    "relu_example_network",
]

_U = 2.0 ** -53


def _gamma(n: int) -> float:
    # doubled to cover the rounding of the bound itself
    return 2.0 * n * _U / (1.0 - n * _U)


class NetworkFormatError(ValueError):
    """Malformed network description; the message names the offending field."""


@dataclass(frozen=True)
class Dense:
    weights: np.ndarray  # (out, in)
    bias: np.ndarray

    def __post_init__(self):
        W = np.atleast_2d(np.asarray(self.weights, dtype=float))
        b = np.asarray(self.bias, dtype=float).reshape(-1)
        if W.shape[0] != b.shape[0]:
            raise ValueError(f"weights have {W.shape[0]} rows but bias has {b.shape[0]} entries")
        if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
            raise ValueError("weights and bias must be finite")
        W.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "weights", W)
        object.__setattr__(self, "bias", b)

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]


@dataclass(frozen=True)
class Activation:
    act: ActivationDef

    def __post_init__(self):
        if self.act.arity != 1:
            raise ValueError(f"activation {self.act.name!r} has arity {self.act.arity}; networks need element-wise (arity 1)")


Layer = Union[Dense, Activation]


@dataclass(frozen=True)
class Network:
    layers: tuple[Layer, ...]
    input_dim: int

    def __post_init__(self):
        layers = tuple(self.layers)
        object.__setattr__(self, "layers", layers)
        if self.input_dim < 1:
            raise ValueError("input_dim must be positive")
        width = self.input_dim
        for k, layer in enumerate(layers):
            if isinstance(layer, Dense):
                if layer.in_dim != width:
                    raise ValueError(f"layer {k} expects {layer.in_dim} inputs, previous width is {width}")
                width = layer.out_dim
            elif not isinstance(layer, Activation):
                raise TypeError(f"layer {k} is neither Dense nor Activation")

    def widths(self) -> list[int]:
        """Width of every layer, input layer first."""
        out = [self.input_dim]
        for layer in self.layers:
            out.append(layer.out_dim if isinstance(layer, Dense) else out[-1])
        return out

    @property
    def output_dim(self) -> int:
        return self.widths()[-1]

    def __call__(self, X: np.ndarray) -> np.ndarray:
        """Evaluate on inputs of shape ``(n, input_dim)`` or ``(input_dim,)``."""
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        H = X.reshape(-1, self.input_dim)
        with np.errstate(all="ignore"):
            for layer in self.layers:
                if isinstance(layer, Dense):
                    H = H @ layer.weights.T + layer.bias
                else:
                    f = _elementwise(layer.act)
                    H = f(H.reshape(1, -1)).reshape(H.shape)
        return H[0] if single else H

    # -- serialization --------------------------------------------------

    @classmethod
    def from_dict(cls, data) -> "Network":
        if not isinstance(data, dict):
            raise NetworkFormatError("network: expected a JSON object")
        if "input_dim" not in data:
            raise NetworkFormatError("input_dim: missing")
        n = data["input_dim"]
        if not isinstance(n, int) or isinstance(n, bool) or n < 1:
            raise NetworkFormatError(f"input_dim: expected a positive integer, got {n!r}")
        raw = data.get("layers")
        if not isinstance(raw, list):
            raise NetworkFormatError("layers: expected a list")
        layers: list[Layer] = []
        width = n
        for k, spec in enumerate(raw):
            where = f"layers[{k}]"
            if not isinstance(spec, dict) or "type" not in spec:
                raise NetworkFormatError(f"{where}.type: missing")
            kind = spec["type"]
            if kind == "dense":
                try:
                    W = np.array(spec["weights"], dtype=float)
                except KeyError:
                    raise NetworkFormatError(f"{where}.weights: missing") from None
                except (TypeError, ValueError) as exc:
                    raise NetworkFormatError(f"{where}.weights: not a numeric matrix ({exc})") from None
                if W.ndim != 2 or W.shape[1] != width:
                    raise NetworkFormatError(f"{where}.weights: expected shape (*, {width}), got {W.shape}")
                try:
                    b = np.array(spec.get("bias", [0.0] * W.shape[0]), dtype=float)
                except (TypeError, ValueError) as exc:
                    raise NetworkFormatError(f"{where}.bias: not a numeric vector ({exc})") from None
                if b.shape != (W.shape[0],):
                    raise NetworkFormatError(f"{where}.bias: expected {W.shape[0]} entries, got shape {b.shape}")
                if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
                    raise NetworkFormatError(f"{where}.weights: values must be finite")
                layers.append(Dense(W, b))
                width = W.shape[0]
            elif kind == "activation":
                layers.append(Activation(_activation_from_spec(spec, where)))
            else:
                raise NetworkFormatError(f"{where}.type: unknown layer type {kind!r}")
        return cls(tuple(layers), n)

    @classmethod
    def from_json(cls, path: str | os.PathLike) -> "Network":
        with open(path, encoding="utf-8") as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise NetworkFormatError(f"network: invalid JSON ({exc})") from None
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        layers = []
        for layer in self.layers:
            if isinstance(layer, Dense):
                layers.append({"type": "dense", "weights": layer.weights.tolist(), "bias": layer.bias.tolist()})
            elif layer.act.name in PRESETS and PRESETS[layer.act.name] == layer.act:
                layers.append({"type": "activation", "name": layer.act.name})
            else:
                from .expr import to_text

                layers.append({"type": "activation", "expr": to_text(layer.act.body)})
        return {"input_dim": self.input_dim, "layers": layers}

    @classmethod
    def random(
        cls,
        rng: np.random.Generator,
        input_dim: int,
        hidden: Sequence[int],
        output_dim: int,
        act: ActivationDef | str,
        scale: float = 1.0,
    ) -> "Network":
        """Dense/activation stack with Glorot-style Gaussian weights."""
        act = get_preset(act) if isinstance(act, str) else act
        layers: list[Layer] = []
        width = input_dim
        for k, out in enumerate(list(hidden) + [output_dim]):
            W = rng.normal(0.0, scale * math.sqrt(2.0 / (width + out)), size=(out, width))
            b = rng.normal(0.0, 0.1 * scale, size=out)
            layers.append(Dense(W, b))
            if k < len(hidden):
                layers.append(Activation(act))
            width = out
        return cls(tuple(layers), input_dim)


def _elementwise(act: ActivationDef):
    return vectorized(act.body)


def _activation_from_spec(spec: dict, where: str) -> ActivationDef:
    if "name" in spec:
        try:
            return get_preset(str(spec["name"]))
        except KeyError as exc:
            raise NetworkFormatError(f"{where}.name: {exc.args[0]}") from None
    if "expr" in spec:
        try:
            act = ActivationDef.from_text(str(spec["expr"]))
        except ExprError as exc:
            raise NetworkFormatError(f"{where}.expr: {exc}") from None
        if act.arity != 1:
            raise NetworkFormatError(f"{where}.expr: network activations must use only x1")
        return act
    raise NetworkFormatError(f"{where}: activation needs 'name' or 'expr'")


def relu_example_network() -> Network:
    """Small two-input ReLU network with outputs ``x7`` and ``x8``.

    The first layer computes ``x3 = x4 = -x1 + x2``; the outputs are
    ``x7 = x5 + x6`` and ``x8 = x5 - x6``.
    """
    return Network(
        (
            Dense([[-1.0, 1.0], [-1.0, 1.0]], [0.0, 0.0]),
            Activation(PRESETS["relu"]),
            Dense([[1.0, 1.0], [1.0, -1.0]], [0.0, 0.0]),
        ),
        2,
    )


# --------------------------------------------------------------------------
# Symbolic bounds


@dataclass(frozen=True)
class SymbolicBound:
    """One neuron bounded linearly in the variables of layer ``over``."""

    over: int
    lower_coeffs: np.ndarray
    lower_offset: float
    upper_coeffs: np.ndarray
    upper_offset: float

    def __post_init__(self):
        lc = np.asarray(self.lower_coeffs, dtype=float).reshape(-1)
        uc = np.asarray(self.upper_coeffs, dtype=float).reshape(-1)
        if lc.shape != uc.shape:
            raise ValueError("lower and upper coefficient vectors must have equal length")
        object.__setattr__(self, "lower_coeffs", lc)
        object.__setattr__(self, "upper_coeffs", uc)
        object.__setattr__(self, "lower_offset", float(self.lower_offset))
        object.__setattr__(self, "upper_offset", float(self.upper_offset))


@dataclass(frozen=True)
class LayerRelation:
    """``L @ x_prev + l <= x <= U @ x_prev + u`` for all neurons of one layer."""

    L: np.ndarray
    l: np.ndarray
    U: np.ndarray
    u: np.ndarray
    relaxations: tuple[LinearRelaxation, ...] | None = field(default=None, repr=False)

    def row(self, j: int, over: int) -> SymbolicBound:
        return SymbolicBound(over, self.L[j], self.l[j], self.U[j], self.u[j])


@dataclass(frozen=True)
class NeuronBounds:
    """Concrete ``[lower, upper]`` per neuron of every layer (input layer first)."""

    lower: tuple[np.ndarray, ...]
    upper: tuple[np.ndarray, ...]

    def layer(self, k: int) -> list[Interval]:
        return [Interval(lo, hi) for lo, hi in zip(self.lower[k], self.upper[k])]

    def __len__(self) -> int:
        return len(self.lower)


def _concretize(C: np.ndarray, o: np.ndarray, lo: np.ndarray, hi: np.ndarray, upper: bool) -> np.ndarray:
    pos, neg = np.maximum(C, 0.0), np.minimum(C, 0.0)
    if upper:
        val = pos @ hi + neg @ lo + o
    else:
        val = pos @ lo + neg @ hi + o
    mag = np.maximum(np.abs(lo), np.abs(hi))
    err = _gamma(C.shape[1] + 1) * (np.abs(C) @ mag + np.abs(o) + np.abs(val))
    return val + err if upper else val - err


def _substitute(C, o, rel: LayerRelation, mag_prev: np.ndarray, upper: bool):
    """Rewrite rows ``C x + o`` over layer k as expressions over layer k - 1."""
    pos, neg = np.maximum(C, 0.0), np.minimum(C, 0.0)
    if upper:
        C2 = pos @ rel.U + neg @ rel.L
        o2 = pos @ rel.u + neg @ rel.l + o
    else:
        C2 = pos @ rel.L + neg @ rel.U
        o2 = pos @ rel.l + neg @ rel.u + o
    # Rounding in C2 and o2 is charged to the offset, using the magnitude of
    # the layer k - 1 variables it multiplies.
    absC = np.abs(C)
    n = C.shape[1] + 1
    M = np.maximum(np.abs(rel.L), np.abs(rel.U))
    m = np.maximum(np.abs(rel.l), np.abs(rel.u))
    err = _gamma(n) * ((absC @ M) @ mag_prev + absC @ m + np.abs(o))
    return C2, (o2 + err if upper else o2 - err)


def _back_substitute_rows(Cl, ol, Cu, ou, k: int, relations, lower, upper):
    """Concrete bounds for rows expressed over layer ``k``."""
    while k > 0:
        rel = relations[k - 1]
        mag_prev = np.maximum(np.abs(lower[k - 1]), np.abs(upper[k - 1]))
        Cl, ol = _substitute(Cl, ol, rel, mag_prev, upper=False)
        Cu, ou = _substitute(Cu, ou, rel, mag_prev, upper=True)
        k -= 1
    lo = _concretize(Cl, ol, lower[0], upper[0], upper=False)
    hi = _concretize(Cu, ou, lower[0], upper[0], upper=True)
    return lo, hi


def back_substitute(
    bound: SymbolicBound,
    relations: Sequence[LayerRelation],
    input_box: BoxRegion | Sequence[Sequence[float]],
    bounds: NeuronBounds | None = None,
) -> Interval:
    """Concrete interval of a symbolic bound, substituted down to the input box.

    ``relations[k - 1]`` relates layer ``k`` to layer ``k - 1``.  ``bounds``
    supplies concrete intervals of the intermediate layers, used only to size
    the rounding-error guard; without it the guard is derived layer by layer.
    """
    box = input_box if isinstance(input_box, BoxRegion) else BoxRegion.of(input_box)
    if bounds is None:
        bounds = _bounds_from_relations(relations[: bound.over], box)
    lo, hi = _back_substitute_rows(
        bound.lower_coeffs[None, :],
        np.array([bound.lower_offset]),
        bound.upper_coeffs[None, :],
        np.array([bound.upper_offset]),
        bound.over,
        relations,
        bounds.lower,
        bounds.upper,
    )
    return Interval(float(lo[0]), float(hi[0]))


def _bounds_from_relations(relations, box: BoxRegion) -> NeuronBounds:
    lower = [np.array(box.lower)]
    upper = [np.array(box.upper)]
    for k, rel in enumerate(relations, start=1):
        lo, hi = _back_substitute_rows(rel.L, rel.l, rel.U, rel.u, k - 1, relations, lower, upper)
        lower.append(lo)
        upper.append(hi)
    return NeuronBounds(tuple(lower), tuple(upper))


def _activation_enclosure(act: ActivationDef, pieces: int = 16):
    """Enclosure of ``act`` over ``[a, b]``: hull over equal pieces of the
    mean-value form, or of the endpoint values where the slope has fixed sign."""
    both = compile_value_and_gradient(act.body, gradient(act.body, 1))

    def enc(a: float, b: float) -> tuple[float, float]:
        if a == b:
            return both([(a, b)])[0]
        cuts = np.linspace(a, b, pieces + 1)
        cuts[-1] = b
        out = None
        for lo, hi in zip(cuts[:-1], cuts[1:]):
            r, (g,) = both([(lo, hi)])
            if g is not None and (g[0] >= 0 or g[1] <= 0):
                r = k_hull(both([(lo, lo)])[0], both([(hi, hi)])[0])
            out = r if out is None else k_hull(out, r)
        return out

    return enc


def _relax_layer(act: ActivationDef, lo: np.ndarray, hi: np.ndarray, cfg: SoundifyConfig, pool):
    boxes = [[(float(a), float(b))] for a, b in zip(lo, hi)]
    if pool is None:
        return [synthesize_relaxation(act, b, cfg) for b in boxes]
    # map() yields in submission order, so results are joined by neuron index
    return list(pool.map(lambda b: synthesize_relaxation(act, b, cfg), boxes))


def resolve_threads(threads: int | None = None) -> int:
    if threads is not None:
        return max(1, int(threads))
    env = os.environ.get("BOUNDSYNTH_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ValueError(f"BOUNDSYNTH_THREADS must be an integer, got {env!r}") from None
    return 6


def forward_bounds(
    net: Network,
    input_box: BoxRegion | Sequence[Sequence[float]],
    cfg: SoundifyConfig = SoundifyConfig(),
    threads: int = 1,
    return_relations: bool = False,
):
    """Concrete bounds for every neuron and the output box.

    Returns ``(NeuronBounds, BoxRegion)``, plus the layer relations when
    ``return_relations`` is set.
    """
    box = input_box if isinstance(input_box, BoxRegion) else BoxRegion.of(input_box)
    if len(box) != net.input_dim:
        raise ValueError(f"input box has {len(box)} dimensions, network expects {net.input_dim}")
    lower = [np.array(box.lower)]
    upper = [np.array(box.upper)]
    relations: list[LayerRelation] = []
    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        for k, layer in enumerate(net.layers, start=1):
            if isinstance(layer, Dense):
                W, b = layer.weights, layer.bias
                rel = LayerRelation(W, b, W, b)
            else:
                relax = _relax_layer(layer.act, lower[-1], upper[-1], cfg, pool)
                lc = np.array([r.lower.coeffs[0] for r in relax])
                uc = np.array([r.upper.coeffs[0] for r in relax])
                rel = LayerRelation(
                    np.diag(lc),
                    np.array([r.lower.offset for r in relax]),
                    np.diag(uc),
                    np.array([r.upper.offset for r in relax]),
                    tuple(relax),
                )
            relations.append(rel)
            lo, hi = _back_substitute_rows(rel.L, rel.l, rel.U, rel.u, k - 1, relations, lower, upper)
            # concretizing the relation directly over the previous layer's
            # intervals is also valid; it keeps results inside plain interval
            # propagation, which back-substitution alone does not guarantee
            lo = np.maximum(lo, _concretize(rel.L, rel.l, lower[-1], upper[-1], upper=False))
            hi = np.minimum(hi, _concretize(rel.U, rel.u, lower[-1], upper[-1], upper=True))
            if isinstance(layer, Activation):
                # so is a rigorous enclosure of the activation itself
                enc = _activation_enclosure(layer.act)
                E = np.array([enc(a, b) for a, b in zip(lower[-1], upper[-1])])
                lo = np.fmax(lo, E[:, 0])
                hi = np.fmin(hi, E[:, 1])
            lower.append(lo)
            upper.append(hi)
    finally:
        if pool is not None:
            pool.shutdown()
    nb = NeuronBounds(tuple(lower), tuple(upper))
    out = BoxRegion.of(zip(lower[-1], upper[-1]))
    if return_relations:
        return nb, out, relations
    return nb, out

