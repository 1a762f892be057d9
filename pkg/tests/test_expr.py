import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from balred.expr import (Binary, Compiled, EvalError, ParseError, Unary, Var, diff_expr,
                         eval_expr, free_variables, parse_expr, simplify, substitute, to_string)
from balred.rng import Lcg64

from corpus import DIFF_CORPUS


def test_parse_builds_tree():
    e = parse_expr("sin(x1)*u2", {"x1", "u2"})
    assert isinstance(e, Binary) and e.op == "*"
    assert e.left == Unary("sin", Var("x1"))
    assert e.right == Var("u2")


@pytest.mark.parametrize("text", ["x1 +", "(x1", "x1)", "sin()", "3 $ 4", "", "   ", "x1 x2",
                                  "*2", "foo(x1)", "2^^3"])
def test_parse_errors(text):
    with pytest.raises(ParseError):
        parse_expr(text)


def test_parse_error_position():
    with pytest.raises(ParseError) as err:
        parse_expr("x1 +")
    assert "end of input" in str(err.value)


def test_unknown_variable_rejected():
    with pytest.raises(ParseError):
        parse_expr("x1 + u9", {"x1"})


def test_power_and_precedence():
    assert eval_expr(parse_expr("2^10"), {}) == 1024
    assert eval_expr(parse_expr("2^3^2"), {}) == 512
    assert eval_expr(parse_expr("-2^2"), {}) == -4
    assert eval_expr(parse_expr("1 - 2 - 3"), {}) == -4
    assert eval_expr(parse_expr("8/4/2"), {}) == 1


def test_eval_examples():
    assert eval_expr(parse_expr("u2/u1"), {"u1": 2, "u2": 6}) == 3
    assert eval_expr(parse_expr("exp(0)"), {}) == 1
    v = eval_expr(parse_expr("cos(x1)^2 + sin(x1)^2"), {"x1": 0.7314})
    assert abs(v - 1) < 1e-15


@pytest.mark.parametrize("text,bind", [("ln(x1)", {"x1": -1.0}), ("1/x1", {"x1": 0.0}),
                                       ("sqrt(u1)", {"u1": -2.0})])
def test_eval_domain_faults(text, bind):
    with pytest.raises(EvalError) as err:
        eval_expr(parse_expr(text), bind)
    assert next(iter(bind)) in str(err.value)


def test_missing_binding():
    with pytest.raises(EvalError, match="u2"):
        eval_expr(parse_expr("u1 + u2"), {"u1": 1.0})


def test_array_faults_raise():
    c = Compiled([parse_expr("ln(x1)")], ["x1"])
    with pytest.raises(EvalError):
        c.array(np.array([1.0, -1.0]))


def test_deterministic_bitwise():
    e = parse_expr("exp(sin(x1))*u5/(1 + x1^2)")
    vals = {eval_expr(e, {"x1": 0.123456789, "u5": 2.5}) for _ in range(5)}
    assert len(vals) == 1


def test_diff_examples():
    assert diff_expr(parse_expr("sin(x1)"), "x1") == parse_expr("cos(x1)")
    d = diff_expr(parse_expr("u2^2/u1"), "u1")
    ref = parse_expr("-(u2^2)/(u1^2)")
    pts = {"u1": 1.7, "u2": -0.4}
    assert abs(eval_expr(d, pts) - eval_expr(ref, pts)) < 1e-15
    d = diff_expr(parse_expr("u5*exp(u1)"), "u5")
    assert abs(eval_expr(d, {"u1": 1.0, "u5": 3.0}) - math.e) < 1e-15


def test_diff_of_absent_variable_is_zero():
    assert eval_expr(diff_expr(parse_expr("x2*u3"), "x1"), {}) == 0


@pytest.mark.parametrize("text,names", DIFF_CORPUS)
def test_diff_against_central_difference(text, names):
    e = parse_expr(text)
    lo = [0.5 if v == "u1" else -1.0 for v in names]
    hi = [1.5 if v == "u1" else 1.0 for v in names]
    pts = Lcg64(3).box(lo, hi, 100)
    f = Compiled([e], names)
    for j, v in enumerate(names):
        exact = Compiled([diff_expr(e, v)], names).array(*pts)[0]
        up, dn = pts.copy(), pts.copy()
        up[j] += 1e-5
        dn[j] -= 1e-5
        fd = (f.array(*up)[0] - f.array(*dn)[0]) / 2e-5
        assert np.max(np.abs(fd - exact) / np.maximum(1, np.abs(exact))) < 1e-6


@pytest.mark.parametrize("text,names", DIFF_CORPUS)
def test_round_trip_corpus(text, names):
    e = parse_expr(text)
    assert parse_expr(to_string(e)) == e
    for v in names:
        d = diff_expr(e, v)
        assert parse_expr(to_string(d)) == d


def test_negative_constants_print_parenthesized():
    e = substitute(parse_expr("x1*c"), {"c": -2.5})
    assert parse_expr(to_string(e)) == e


def test_free_variables_and_substitute():
    e = parse_expr("x1*u2 + sin(x3)")
    assert free_variables(e) == {"x1", "u2", "x3"}
    s = substitute(e, {"x1": 2.0, "x3": 0.0})
    assert free_variables(s) == {"u2"}
    assert eval_expr(s, {"u2": 1.5}) == 3.0


def test_simplify_folds_constants():
    assert to_string(simplify(parse_expr("2*3 + 0*x1 + 1*x2"))) == "6 + x2"


def test_compiled_scalar_and_array_agree():
    c = Compiled([parse_expr("u1*exp(x1)"), parse_expr("2")], ["x1", "u1"])
    a = c.array(np.array([0.1, 0.2]), np.array([1.0, 2.0]))
    assert a.shape == (2, 2)
    assert a[0, 1] == c.scalar(0.2, 2.0)[0]
    assert np.all(a[1] == 2)


# -- property tests ----------------------------------------------------------

_NAMES = ["x1", "x2", "u1"]
_leaf = st.one_of(st.sampled_from(_NAMES).map(parse_expr),
                  st.floats(-5, 5, allow_nan=False).map(lambda v: parse_expr(repr(abs(v)))))


def _extend(children):
    return st.one_of(
        st.tuples(st.sampled_from(["+", "-", "*"]), children, children).map(
            lambda t: parse_expr(f"({to_string(t[1])}) {t[0]} ({to_string(t[2])})")),
        st.tuples(st.sampled_from(["sin", "cos", "exp"]), children).map(
            lambda t: parse_expr(f"{t[0]}({to_string(t[1])})")),
        children.map(lambda c: parse_expr(f"-({to_string(c)})")),
        children.map(lambda c: parse_expr(f"({to_string(c)})^2")),
    )


_exprs = st.recursive(_leaf, _extend, max_leaves=8)


@settings(max_examples=150, deadline=None)
@given(_exprs)
def test_print_parse_round_trip_property(e):
    assert parse_expr(to_string(e)) == e


@settings(max_examples=100, deadline=None)
@given(_exprs, st.floats(-1, 1), st.floats(-1, 1), st.floats(0.5, 1.5))
def test_derivative_matches_fd_property(e, x1, x2, u1):
    b = {"x1": x1, "x2": x2, "u1": u1}
    try:
        exact = eval_expr(diff_expr(e, "x1"), b)
        h = 1e-6
        fp = eval_expr(e, {**b, "x1": x1 + h})
        fm = eval_expr(e, {**b, "x1": x1 - h})
    except (EvalError, OverflowError):
        return
    if not all(map(math.isfinite, (exact, fp, fm))) or abs(exact) > 1e6:
        return
    assert abs((fp - fm) / (2 * h) - exact) <= 1e-4 * max(1.0, abs(exact))


@settings(max_examples=100, deadline=None)
@given(_exprs, _exprs, st.floats(-1, 1))
def test_derivative_is_linear(f, g, x1):
    b = {"x1": x1, "x2": 0.3, "u1": 1.1}
    try:
        lhs = eval_expr(diff_expr(parse_expr(f"({f}) + 2*({g})"), "x1"), b)
        rhs = eval_expr(diff_expr(f, "x1"), b) + 2 * eval_expr(diff_expr(g, "x1"), b)
    except (EvalError, OverflowError):
        return
    if math.isfinite(lhs) and math.isfinite(rhs):
        assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(rhs))
