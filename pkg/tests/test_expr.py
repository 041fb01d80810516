import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from boundsynth import presets
from boundsynth.expr import (
    ActivationDef,
    ArityError,
    DomainError,
    Expr,
    ExprSyntaxError,
    UnknownIdentifier,
    compile_numpy,
    const,
    differentiate,
    evaluate,
    gradient,
    parse,
    substitute,
    to_text,
    var,
)

# Smooth trees whose values stay finite on [-2, 2]^2.
_leaf = st.one_of(
    st.builds(var, st.integers(1, 2)),
    st.builds(const, st.floats(-3, 3, allow_nan=False).map(lambda c: round(c, 3))),
)


def _extend(children):
    return st.one_of(
        st.builds(lambda a, b: a + b, children, children),
        st.builds(lambda a, b: a - b, children, children),
        st.builds(lambda a, b: a * b, children, children),
        st.builds(lambda a: -a, children),
        st.builds(lambda a: Expr("tanh", (a,)), children),
        st.builds(lambda a: Expr("exp", (Expr("tanh", (a,)),)), children),
        st.builds(lambda a, k: a ** k, children, st.integers(0, 3)),
        st.builds(lambda a: 1 / (1 + Expr("exp", (-Expr("tanh", (a,)),))), children),
    )


smooth_exprs = st.recursive(_leaf, _extend, max_leaves=8)
points = st.lists(st.floats(-2, 2, allow_nan=False), min_size=2, max_size=2)


def test_parse_sigmoid_text():
    e = parse("x1/(1+exp(-x1))")
    assert e.arity == 1
    assert evaluate(e, [2.0]) == pytest.approx(2.0 / (1.0 + math.exp(-2.0)))


def test_parse_hard_tanh():
    e = parse("min(1, max(x1, -1))")
    assert [evaluate(e, [x]) for x in (-3.0, -0.5, 0.25, 4.0)] == [-1.0, -0.5, 0.25, 1.0]


def test_unbalanced_parenthesis_is_syntax_error():
    with pytest.raises(ExprSyntaxError) as info:
        parse("x1 * (1/(1+exp(-x2))")
    assert info.value.position == len("x1 * (1/(1+exp(-x2))")
    assert ")" in info.value.expected


@pytest.mark.parametrize("text, exc", [("foo(x1)", UnknownIdentifier), ("y + 1", UnknownIdentifier),
                                       ("min(x1)", ArityError), ("exp(x1, x2)", ArityError),
                                       ("x1 +", ExprSyntaxError), ("x1 ^ 1.5", ExprSyntaxError),
                                       ("x0", UnknownIdentifier), ("2 3", ExprSyntaxError)])
def test_parse_errors(text, exc):
    with pytest.raises(exc):
        parse(text)


def test_precedence():
    # the grammar's factor := '-' factor | atom ('^' integer) makes -x1^2 = -(x1^2)
    assert evaluate(parse("-x1^2"), [3.0]) == -9.0
    assert evaluate(parse("(-x1)^2"), [3.0]) == 9.0
    assert evaluate(parse("2*x1^2 + 1"), [3.0]) == 19.0
    assert evaluate(parse("8/2/2"), []) == 2.0
    assert evaluate(parse("1 - 2 - 3"), []) == -4.0


def test_sigmoid_values():
    sig = presets.get("sigmoid")
    assert sig(0.0) == 0.5
    # high-precision reference for 1/(1+e^-1.5)
    assert sig(1.5) == pytest.approx(0.8175744761936437, abs=1e-15)
    assert presets.get("swish")(0.0) == 0.0


def test_domain_errors():
    with pytest.raises(DomainError):
        evaluate(parse("log(x1)"), [0.0])
    with pytest.raises(DomainError):
        evaluate(parse("sqrt(x1)"), [-1.0])
    with pytest.raises(DomainError):
        evaluate(parse("1/x1"), [0.0])
    with pytest.raises(ValueError):
        evaluate(parse("x1 + x2"), [1.0])


def test_vectorized_marks_domain_errors_nan():
    f = compile_numpy(parse("log(x1)"))
    with np.errstate(all="ignore"):
        out = f(np.array([[-1.0, 1.0]]))
    assert math.isnan(out[0]) and out[1] == 0.0


def test_derivative_examples():
    assert evaluate(differentiate(parse("x1*x1"), 1), [1.7]) == pytest.approx(3.4)
    assert evaluate(differentiate(presets.get("sigmoid").body, 1), [0.0]) == pytest.approx(0.25)
    assert differentiate(parse("x1*x1"), 2) == const(0.0)


def test_min_max_abs_branch_selection():
    e = parse("min(x1, x2)")
    assert evaluate(differentiate(e, 1), [0.0, 1.0]) == 1.0
    assert evaluate(differentiate(e, 2), [0.0, 1.0]) == 0.0
    # ties go to the first argument
    assert evaluate(differentiate(e, 1), [1.0, 1.0]) == 1.0
    assert evaluate(differentiate(parse("max(x1, x2)"), 1), [1.0, 1.0]) == 1.0
    assert evaluate(differentiate(parse("abs(x1)"), 1), [-2.0]) == -1.0
    assert evaluate(differentiate(parse("abs(x1)"), 1), [2.0]) == 1.0


def _central_fd(e, p, i, h=1e-6):
    up, dn = list(p), list(p)
    up[i] += h
    dn[i] -= h
    return (evaluate(e, up) - evaluate(e, dn)) / (2 * h)


@settings(max_examples=50, deadline=None)
@given(smooth_exprs, points)
def test_derivative_matches_finite_differences(e, p):
    for i in range(2):
        sym = evaluate(differentiate(e, i + 1), p)
        fd = _central_fd(e, p, i)
        assert abs(sym - fd) <= 1e-5 * (1 + abs(sym))


def test_derivative_of_kinked_presets_away_from_kinks():
    rng = np.random.default_rng(3)
    for name in ("relu", "hardtanh"):
        act = presets.get(name)
        for x in rng.uniform(-4, 4, 50):
            if min(abs(x), abs(x - 1), abs(x + 1)) < 1e-3:
                continue
            sym = evaluate(differentiate(act.body, 1), [x])
            assert abs(sym - _central_fd(act.body, [x], 0)) <= 1e-5 * (1 + abs(sym))


@settings(max_examples=100, deadline=None)
@given(smooth_exprs, points)
def test_round_trip(e, p):
    back = parse(to_text(e))
    a, b = evaluate(e, p), evaluate(back, p)
    assert a == pytest.approx(b, rel=1e-12, abs=1e-12)


def test_round_trip_presets():
    rng = np.random.default_rng(0)
    for act in presets.PRESETS.values():
        back = parse(to_text(act.body))
        for _ in range(100):
            p = list(rng.uniform(-5, 5, act.arity))
            assert evaluate(back, p) == pytest.approx(evaluate(act.body, p), rel=1e-12, abs=1e-12)


def test_gelu_preset():
    g = presets.get("gelu")
    assert g(0.0) == 0.0
    for x in (6.0, 7.5, 10.0):
        assert abs(g(x) - x) <= 1e-6


def test_loglog_is_sigmoid_shaped():
    f = presets.get("loglog")
    assert 0 < f(-10.0) < 1e-4 and 1 - 1e-9 < f(5.0) <= 1.0
    assert f(0.0) == pytest.approx(1 - math.exp(-1))


def test_activation_def_arity_checks():
    with pytest.raises(ValueError):
        ActivationDef("bad", 1, parse("x1 + x2"))
    assert ActivationDef.from_text("x1*sigmoid(x2)").arity == 2
    with pytest.raises(ArityError):
        ActivationDef.from_text("3")


def test_expr_is_immutable_and_hashable():
    e = parse("x1 + 1")
    with pytest.raises(Exception):
        e.kind = "sub"
    assert hash(e) == hash(parse("x1 + 1"))
    with pytest.raises(ValueError):
        Expr("pow", (var(1),), -1)


def test_substitute_and_renumber():
    e = parse("x1 * x2 + x3")
    s = substitute(e, {2: 3.0}, {3: 2})
    assert s.arity == 2
    assert evaluate(s, [2.0, 1.0]) == 7.0


def test_gradient_length():
    assert len(gradient(parse("x1*x2"))) == 2
    assert len(gradient(parse("x1"), 3)) == 3
