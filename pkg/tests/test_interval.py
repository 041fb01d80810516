import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from boundsynth import interval, presets
from boundsynth.expr import evaluate, gradient, parse
from boundsynth.interval import (
    BoxRegion,
    DivisionByZeroInterval,
    DomainErrorInterval,
    Interval,
    compile_interval,
    compile_mean_value,
    eval_interval,
    iv_binary,
    iv_unary,
    set_widening,
)
from boundsynth.selftest import _mp_eval

from test_expr import smooth_exprs


def test_interval_validation():
    with pytest.raises(ValueError):
        Interval(1.0, 0.0)
    with pytest.raises(ValueError):
        Interval(0.0, math.inf)
    with pytest.raises(ValueError):
        BoxRegion(())
    box = BoxRegion.of([(0, 1), (2, 4)])
    assert box.widths == [1.0, 2.0] and box.center == [0.5, 3.0]
    assert box.contains_point([0.5, 4.0]) and not box.contains_point([1.5, 3.0])


def _encloses(iv: Interval, lo: float, hi: float) -> bool:
    return iv.lo <= lo and hi <= iv.hi


def test_binary_examples():
    assert _encloses(iv_binary("mul", Interval(-1, 2), Interval(3, 4)), -4, 8)
    assert _encloses(iv_binary("min", Interval(0, 5), Interval(-1, 3)), -1, 3)
    assert _encloses(iv_binary("div", Interval(1, 1), Interval(2, 4)), 0.25, 0.5)
    with pytest.raises(DivisionByZeroInterval):
        iv_binary("div", Interval(1, 2), Interval(-1, 1))
    with pytest.raises(DivisionByZeroInterval):
        iv_binary("div", Interval(1, 2), Interval(0, 1))


def test_unary_examples():
    with mpmath.workdps(40):
        e1 = float(mpmath.e)
    assert _encloses(iv_unary("exp", Interval(0, 1)), 1.0, e1)
    sq = iv_unary("pow_2", Interval(-2, 1))
    assert _encloses(sq, 0.0, 4.0) and sq.lo < 0.0 < 1e-300
    assert iv_unary("pow", Interval(-2, 1), 3).lo <= -8.0
    t = iv_unary("tanh", Interval(0, 0))
    assert t.lo < 0.0 < t.hi and t.width < 1e-300
    with pytest.raises(DomainErrorInterval):
        iv_unary("log", Interval(0, 1))
    with pytest.raises(DomainErrorInterval):
        iv_unary("sqrt", Interval(-1, 1))
    assert _encloses(iv_unary("abs", Interval(-3, 2)), 0, 3)


def test_outward_widening_is_strict():
    a = iv_binary("add", Interval(0.1, 0.1), Interval(0.2, 0.2))
    assert a.lo < 0.1 + 0.2 < a.hi
    assert a.hi == math.nextafter(0.1 + 0.2, math.inf)


def test_natural_extension_dependency_problem():
    iv = eval_interval(parse("x1 - x1"), [(0, 1)])
    assert iv.lo <= 0.0 <= iv.hi
    assert iv.lo >= -1.0 - 1e-12 and iv.hi <= 1.0 + 1e-12


def test_sigmoid_enclosure_on_box():
    iv = eval_interval(presets.get("sigmoid").body, [(-1, 3.5)])
    # monotone: the exact image is [sigma(-1), sigma(3.5)]
    with mpmath.workdps(40):
        lo, hi = (1 / (1 + mpmath.exp(-mpmath.mpf(x))) for x in (-1, 3.5))
    assert 0.26 <= iv.lo and iv.hi <= 0.98
    assert mpmath.mpf(iv.lo) <= lo and hi <= mpmath.mpf(iv.hi)


def test_degenerate_box_width():
    rng = np.random.default_rng(0)
    for act in presets.PRESETS.values():
        p = list(rng.uniform(-3, 3, act.arity))
        iv = eval_interval(act.body, [(x, x) for x in p])
        val = evaluate(act.body, p)
        assert iv.lo <= val <= iv.hi
        # a few ulps per primitive, far below any tolerance used downstream
        assert iv.width <= 1e-13 * (1 + abs(val))


def test_point_boxes_enclose_exact_values():
    # 60-digit reference values, independent of double rounding
    rng = np.random.default_rng(1)
    with mpmath.workdps(60):
        for act in presets.PRESETS.values():
            f = compile_interval(act.body)
            for _ in range(100):
                p = [float(v) for v in rng.uniform(-6, 6, act.arity)]
                lo, hi = f([(v, v) for v in p])
                ref = _mp_eval(act.body, p)
                assert mpmath.mpf(lo) <= ref <= mpmath.mpf(hi)


def test_disabling_widening_breaks_enclosure():
    previous = set_widening(False)
    try:
        misses = 0
        rng = np.random.default_rng(2)
        f = compile_interval(presets.get("sigmoid").body)
        with mpmath.workdps(60):
            for x in rng.uniform(-6, 6, 200):
                lo, hi = f([(x, x)])
                ref = _mp_eval(presets.get("sigmoid").body, [x])
                misses += not (mpmath.mpf(lo) <= ref <= mpmath.mpf(hi))
        assert misses > 0
    finally:
        set_widening(previous)
    assert interval._WIDEN


def _random_box(rng, d):
    c = rng.uniform(-3, 3, d)
    w = rng.uniform(0, 2, d)
    return [(float(a - b / 2), float(a + b / 2)) for a, b in zip(c, w)]


def test_soundness_presets_random_boxes():
    rng = np.random.default_rng(4)
    count = 0
    for act in presets.PRESETS.values():
        f = compile_interval(act.body)
        for _ in range(1000 // len(presets.PRESETS) + 1):
            box = _random_box(rng, act.arity)
            lo, hi = f(box)
            p = [rng.uniform(a, b) for a, b in box]
            assert lo <= evaluate(act.body, p) <= hi
            count += 1
    assert count >= 1000


@settings(max_examples=300, deadline=None)
@given(smooth_exprs, st.integers(0, 2**32 - 1))
def test_soundness_and_inclusion_monotonicity(e, seed):
    rng = np.random.default_rng(seed)
    box = [tuple(sorted(rng.uniform(-2, 2, 2))) for _ in range(2)]
    inner = [tuple(sorted(rng.uniform(a, b, 2))) for a, b in box]
    f = compile_interval(e)
    outer_iv, inner_iv = f(box), f(inner)
    assert outer_iv[0] <= inner_iv[0] and inner_iv[1] <= outer_iv[1]
    p = [rng.uniform(a, b) for a, b in inner]
    v = evaluate(e, p)
    assert inner_iv[0] <= v <= inner_iv[1]


@settings(max_examples=200, deadline=None)
@given(smooth_exprs, st.integers(0, 2**32 - 1))
def test_mean_value_form_is_sound_and_not_wider(e, seed):
    rng = np.random.default_rng(seed)
    box = [tuple(sorted(rng.uniform(-2, 2, 2))) for _ in range(2)]
    mv = compile_mean_value(e, gradient(e, 2))(box)
    nat = compile_interval(e)(box)
    assert nat[0] <= mv[0] and mv[1] <= nat[1]
    for _ in range(5):
        p = [rng.uniform(a, b) for a, b in box]
        assert mv[0] <= evaluate(e, p) <= mv[1]


def test_mean_value_removes_affine_dependency():
    e = parse("x1 - x1")
    lo, hi = compile_mean_value(e, gradient(e, 1))([(0.0, 1.0)])
    assert -1e-15 <= lo <= 0.0 <= hi <= 1e-15


def test_mean_value_handles_kinks():
    e = presets.get("hardtanh").body
    f = compile_mean_value(e, gradient(e, 1))
    rng = np.random.default_rng(5)
    for _ in range(200):
        box = [tuple(sorted(rng.uniform(-3, 3, 2)))]
        lo, hi = f(box)
        for x in np.linspace(*box[0], 11):
            assert lo <= evaluate(e, [x]) <= hi


def test_eval_interval_errors():
    with pytest.raises(DomainErrorInterval):
        eval_interval(parse("log(x1)"), [(-1, 1)])
    with pytest.raises(ValueError):
        eval_interval(parse("x1 + x2"), [(0, 1)])
    with pytest.raises(DomainErrorInterval):
        eval_interval(parse("exp(exp(x1))"), [(0, 800)])
