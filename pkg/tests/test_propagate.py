import json

import numpy as np
import pytest

from boundsynth import presets
from boundsynth.interval import BoxRegion
from boundsynth.propagate import (
    Activation,
    Dense,
    Network,
    NetworkFormatError,
    SymbolicBound,
    back_substitute,
    relu_example_network,
    forward_bounds,
    resolve_threads,
)


def layer_values(net: Network, X: np.ndarray) -> list[np.ndarray]:
    """Every layer's values for a batch, computed directly with numpy formulas."""
    f = {
        "swish": lambda z: z / (1 + np.exp(-z)),
        "relu": lambda z: np.maximum(z, 0),
        "tanh": np.tanh,
        "hardtanh": lambda z: np.clip(z, -1, 1),
    }
    out = [X]
    for layer in net.layers:
        if isinstance(layer, Dense):
            out.append(out[-1] @ layer.weights.T + layer.bias)
        else:
            out.append(f[layer.act.name](out[-1]))
    return out


def naive_interval(net: Network, box):
    lo, hi = np.array(box, dtype=float).T
    for layer in net.layers:
        if isinstance(layer, Dense):
            W, b = layer.weights, layer.bias
            P, N = np.maximum(W, 0), np.minimum(W, 0)
            lo, hi = P @ lo + N @ hi + b, P @ hi + N @ lo + b
        else:
            f = {"tanh": np.tanh, "relu": lambda z: np.maximum(z, 0)}[layer.act.name]
            lo, hi = f(lo), f(hi)
    return lo, hi


def sample_box(rng, box, n):
    lo, hi = np.array(box, dtype=float).T
    return lo + rng.random((n, lo.size)) * (hi - lo)


def test_relu_example_first_layer_bounds():
    nb, _ = forward_bounds(relu_example_network(), [(-1, 1), (-1, 1)])
    assert nb.lower[1] == pytest.approx([-2.0, -2.0], abs=1e-9)
    assert nb.upper[1] == pytest.approx([2.0, 2.0], abs=1e-9)
    assert np.all(nb.lower[1] <= -2.0) and np.all(nb.upper[1] >= 2.0)


def test_relu_example_relu_layer_and_output():
    nb, out, rel = forward_bounds(relu_example_network(), [(-1, 1), (-1, 1)], return_relations=True)
    # ReLU output is within [0, 2] up to the relaxation margins
    assert np.all(nb.lower[2] <= 0) and np.all(nb.lower[2] >= -1e-5)
    assert np.all(nb.upper[2] >= 2) and np.all(nb.upper[2] <= 2 + 1e-5)
    # the volume-optimal upper plane on [-2, 2] is the chord 0.5x + 1
    relu = rel[1].relaxations[0]
    assert relu.upper.coeffs[0] == pytest.approx(0.5, abs=1e-9)
    assert relu.upper.offset == pytest.approx(1.0, abs=2e-6)
    # x7 = x5 + x6 in [0, 4] and x8 = x5 - x6 in [-1, 1], widened by the margins
    assert -1e-5 <= out[0].lo <= 0 and 4 <= out[0].hi <= 4 + 1e-5
    assert -1 - 1e-5 <= out[1].lo <= -1 and 1 <= out[1].hi <= 1 + 1e-5
    # the property x7 > x8 cannot be established
    assert out[0].lo < out[1].hi


def test_identity_layer():
    net = Network((Dense(np.eye(3), np.zeros(3)),), 3)
    box = [(-1.0, 2.0), (0.5, 0.75), (-3.0, -3.0)]
    _, out = forward_bounds(net, box)
    for (a, b), iv in zip(box, out):
        assert iv.lo <= a and iv.hi >= b
        assert iv.lo == pytest.approx(a, abs=1e-9) and iv.hi == pytest.approx(b, abs=1e-9)


def test_zero_weight_network():
    net = Network((Dense(np.zeros((4, 2)), np.zeros(4)), Activation(presets.get("swish")), Dense(np.zeros((2, 4)), [0.5, -1.0])), 2)
    _, out = forward_bounds(net, [(-1, 1), (-1, 1)])
    for iv, b in zip(out, (0.5, -1.0)):
        assert iv.lo <= b <= iv.hi and iv.hi - iv.lo <= 1e-12


def test_affine_exactness_and_monotonicity():
    rng = np.random.default_rng(3)
    for _ in range(20):
        W1, W2 = rng.normal(size=(5, 3)), rng.normal(size=(2, 5))
        b1, b2 = rng.normal(size=5), rng.normal(size=2)
        net = Network((Dense(W1, b1), Dense(W2, b2)), 3)
        box = [tuple(sorted(rng.uniform(-2, 2, 2))) for _ in range(3)]
        _, out = forward_bounds(net, box)
        # image box of the composed affine map
        W, b = W2 @ W1, W2 @ b1 + b2
        lo, hi = np.array(box).T
        P, N = np.maximum(W, 0), np.minimum(W, 0)
        exact_lo, exact_hi = P @ lo + N @ hi + b, P @ hi + N @ lo + b
        assert np.array(out.lower) == pytest.approx(exact_lo, abs=1e-9)
        assert np.array(out.upper) == pytest.approx(exact_hi, abs=1e-9)
        X = sample_box(rng, box, 2000)
        Y = net(X)
        assert np.all(Y >= np.array(out.lower)) and np.all(Y <= np.array(out.upper))
        sub = [(a + 0.25 * (c - a), c - 0.25 * (c - a)) for a, c in box]
        _, inner = forward_bounds(net, sub)
        assert np.all(np.array(inner.lower) >= np.array(out.lower) - 1e-9)
        assert np.all(np.array(inner.upper) <= np.array(out.upper) + 1e-9)


def test_single_hidden_layer_shrinking_never_widens():
    rng = np.random.default_rng(5)
    for act in ("swish", "tanh", "relu", "hardtanh"):
        for _ in range(4):
            net = Network.random(rng, 3, [6], 2, act)
            c, r = rng.uniform(-1, 1, 3), rng.uniform(0.1, 1.0)
            big = [(ci - r, ci + r) for ci in c]
            sub = [(a + 0.3 * r, b - 0.2 * r) for a, b in big]
            B, _ = forward_bounds(net, big)
            S, _ = forward_bounds(net, sub)
            # the activation layer itself; later layers are not guaranteed
            assert np.all(S.lower[2] >= B.lower[2] - 1e-9)
            assert np.all(S.upper[2] <= B.upper[2] + 1e-9)


def test_contained_in_naive_intervals_and_contains_samples():
    rng = np.random.default_rng(7)
    for act in ("tanh", "relu"):
        for _ in range(3):
            net = Network.random(rng, 2, [5], 3, act)
            box = [(-0.5, 0.7), (0.1, 1.2)]
            _, out = forward_bounds(net, box)
            nlo, nhi = naive_interval(net, box)
            assert np.all(np.array(out.lower) >= nlo - 1e-9)
            assert np.all(np.array(out.upper) <= nhi + 1e-9)
            Y = net(sample_box(rng, box, 100_000))
            assert np.all(Y >= np.array(out.lower)) and np.all(Y <= np.array(out.upper))


def test_random_swish_networks_every_neuron_contains_samples():
    rng = np.random.default_rng(11)
    for _ in range(20):
        net = Network.random(rng, 3, [int(rng.integers(2, 9)), int(rng.integers(2, 9))], 3, "swish")
        c = rng.uniform(-1, 1, 3)
        r = rng.uniform(0.01, 0.5)
        box = [(ci - r, ci + r) for ci in c]
        nb, _ = forward_bounds(net, box)
        for k, vals in enumerate(layer_values(net, sample_box(rng, box, 10_000))):
            assert np.all(vals >= nb.lower[k]) and np.all(vals <= nb.upper[k]), f"layer {k}"


def test_back_substitute_matches_forward():
    net = relu_example_network()
    box = BoxRegion.of([(-1, 1), (-1, 1)])
    nb, out, rel = forward_bounds(net, box, return_relations=True)
    top = rel[-1]
    for j in range(2):
        iv = back_substitute(top.row(j, 2), rel, box)
        # forward bounds also intersect with one-step concretization
        assert iv.lo <= out[j].lo and iv.hi >= out[j].hi
    # for x8 = x5 - x6 back-substitution is the tighter of the two
    iv = back_substitute(top.row(1, 2), rel, box)
    assert (iv.lo, iv.hi) == (out[1].lo, out[1].hi)
    # x3 - x4 is identically zero
    iv = back_substitute(SymbolicBound(1, [1.0, -1.0], 0.0, [1.0, -1.0], 0.0), rel, box)
    assert iv.lo <= 0 <= iv.hi and iv.hi - iv.lo < 1e-12


def test_threads_do_not_change_results():
    rng = np.random.default_rng(13)
    net = Network.random(rng, 4, [8, 8], 3, "gelu")
    box = [(-0.2, 0.1), (0.0, 0.3), (-0.5, -0.4), (0.2, 0.25)]
    a, _ = forward_bounds(net, box, threads=1)
    b, _ = forward_bounds(net, box, threads=3)
    for x, y in zip(a.lower + a.upper, b.lower + b.upper):
        assert np.array_equal(x, y)


def test_resolve_threads(monkeypatch):
    monkeypatch.delenv("BOUNDSYNTH_THREADS", raising=False)
    assert resolve_threads() == 6
    monkeypatch.setenv("BOUNDSYNTH_THREADS", "2")
    assert resolve_threads() == 2 and resolve_threads(4) == 4
    monkeypatch.setenv("BOUNDSYNTH_THREADS", "many")
    with pytest.raises(ValueError):
        resolve_threads()


def test_json_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    net = Network.random(rng, 2, [3], 2, "loglog")
    path = tmp_path / "net.json"
    path.write_text(json.dumps(net.to_dict()))
    back = Network.from_json(path)
    X = rng.normal(size=(10, 2))
    assert np.array_equal(net(X), back(X))
    d = {"input_dim": 1, "layers": [{"type": "activation", "expr": "x1*sigmoid(x1)"}]}
    assert Network.from_dict(d)(np.array([1.0]))[0] == pytest.approx(1 / (1 + np.exp(-1)))


@pytest.mark.parametrize(
    "data, field",
    [
        ([], "network"),
        ({"layers": []}, "input_dim"),
        ({"input_dim": 0, "layers": []}, "input_dim"),
        ({"input_dim": 2}, "layers"),
        ({"input_dim": 2, "layers": [{"type": "conv"}]}, "layers[0].type"),
        ({"input_dim": 2, "layers": [{"type": "dense", "weights": [[1, 2, 3]]}]}, "layers[0].weights"),
        ({"input_dim": 2, "layers": [{"type": "dense", "weights": [[1, 2]], "bias": [0, 0]}]}, "layers[0].bias"),
        ({"input_dim": 1, "layers": [{"type": "dense", "weights": [[1]]}, {"type": "activation", "name": "nope"}]}, "layers[1].name"),
        ({"input_dim": 1, "layers": [{"type": "activation", "expr": "x1*x2"}]}, "layers[0].expr"),
        ({"input_dim": 1, "layers": [{"type": "activation", "expr": "x1+"}]}, "layers[0].expr"),
        ({"input_dim": 1, "layers": [{"type": "activation"}]}, "layers[0]"),
    ],
)
def test_format_errors_name_the_field(data, field):
    with pytest.raises(NetworkFormatError, match=field.replace("[", r"\[").replace("]", r"\]")):
        Network.from_dict(data)


def test_invalid_construction():
    with pytest.raises(ValueError):
        Network((Dense(np.ones((2, 3)), np.zeros(2)),), 2)
    with pytest.raises(ValueError):
        Dense([[np.nan]], [0.0])
    with pytest.raises(ValueError):
        Activation(presets.get("sig_tanh"))
    with pytest.raises(ValueError):
        forward_bounds(relu_example_network(), [(0, 1)])


def test_domain_error_propagates():
    from boundsynth.expr import ActivationDef
    from boundsynth.soundify import RelaxationDomainError

    net = Network((Dense([[1.0]], [0.0]), Activation(ActivationDef.from_text("log(x1)"))), 1)
    with pytest.raises(RelaxationDomainError):
        forward_bounds(net, [(-1.0, 1.0)])
