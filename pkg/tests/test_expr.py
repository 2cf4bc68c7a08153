import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from odedbn.expr import (
    Binary,
    Call,
    Constant,
    DomainError,
    ExpressionSyntaxError,
    Symbol,
    UnboundSymbol,
    Unary,
    UnknownFunction,
    eval_array,
    eval_expr,
    free_symbols,
    parse_expr,
    unparse,
)

LORENZ_ENV = {"a": -8 / 3, "b": -10.0, "c": 28.0, "X": 1.0, "Y": 1.0, "Z": 1.0}


def test_parse_lorenz_rhs():
    assert parse_expr("a*X + Y*Z") == Binary(
        "add", Binary("mul", Symbol("a"), Symbol("X")), Binary("mul", Symbol("Y"), Symbol("Z"))
    )
    assert parse_expr("b*(Y - Z)") == Binary("mul", Symbol("b"), Binary("sub", Symbol("Y"), Symbol("Z")))
    assert parse_expr("X") == Symbol("X")


@pytest.mark.parametrize(
    "text, env, expected",
    [
        ("b*(Y-Z)", {"b": -10, "Y": 2, "Z": 2}, 0.0),
        ("a*X + Y*Z", LORENZ_ENV, -5 / 3),
        ("c*Y - Z - X*Y", LORENZ_ENV, 26.0),
        ("2^3^2", {}, 512.0),
        ("1+2*3", {}, 7.0),
        ("(1+2)*3", {}, 9.0),
        ("-2^2", {}, -4.0),
        ("2^-1", {}, 0.5),
        ("8/4/2", {}, 1.0),
        ("10-4-3", {}, 3.0),
        ("--3", {}, 3.0),
        ("1.5e2 + .5", {}, 150.5),
        ("max(1, 2, -3) + min(4, 5)", {}, 6.0),
        ("abs(-2) * sqrt(9) + ln(exp(1)) + sin(0) + cos(0)", {}, 8.0),
        ("k/(k+T)", {"k": 0.46, "T": 0.54}, 0.46),
    ],
)
def test_eval_examples(text, env, expected):
    assert eval_expr(parse_expr(text), env) == pytest.approx(expected, rel=1e-15, abs=1e-15)


def test_free_symbols():
    assert free_symbols(parse_expr("a*X + Y*Z")) == {"a", "X", "Y", "Z"}
    assert free_symbols(parse_expr("3.5")) == frozenset()
    assert free_symbols(parse_expr("X + X")) == {"X"}
    assert free_symbols(parse_expr("max(p, exp(-q))")) == {"p", "q"}


@pytest.mark.parametrize("text", ["", "1 +", "(1", "1)", "a b", "2 ** 3", "exp(", "1,2", "3 $ 4", "max()"])
def test_syntax_errors_carry_position(text):
    with pytest.raises(ExpressionSyntaxError) as info:
        parse_expr(text)
    assert 0 <= info.value.position <= len(text)
    assert info.value.expected


def test_unknown_function():
    with pytest.raises(UnknownFunction) as info:
        parse_expr("tanh(x)")
    assert "tanh" in str(info.value)


def test_unbound_symbol_is_an_error_not_zero():
    with pytest.raises(UnboundSymbol):
        eval_expr(parse_expr("a + 1"), {})


@pytest.mark.parametrize("text", ["ln(0)", "ln(-1)", "sqrt(-1)", "1/0", "1/(x-x)", "0^-1", "(-8)^(1/3)"])
def test_domain_errors(text):
    with pytest.raises(DomainError):
        eval_expr(parse_expr(text), {"x": 2.0})


def test_eval_array_matches_scalar():
    node = parse_expr("a*X + Y*Z - max(X, 0.5)^2 / (1 + abs(Z))")
    rng = np.random.default_rng(0)
    env = {k: rng.normal(size=50) for k in "XYZ"}
    env["a"] = -8 / 3
    out = eval_array(node, env)
    for i in range(50):
        scalar = eval_expr(node, {"a": env["a"], **{k: float(env[k][i]) for k in "XYZ"}})
        assert out[i] == scalar


def test_eval_array_broadcasts_constants():
    out = eval_array(parse_expr("2*k"), {"k": 3.0}, size=4)
    assert out.shape == (4,) and np.all(out == 6.0)


def test_eval_array_marks_domain_failures_nan():
    out = eval_array(parse_expr("ln(x) + 1/y"), {"x": np.array([1.0, -1.0, 1.0]), "y": np.array([1.0, 1.0, 0.0])})
    assert out[0] == 1.0 and math.isnan(out[1]) and not math.isfinite(out[2])


# ---- round-trip property ---------------------------------------------------

names = st.sampled_from(["a", "b", "X", "Y_2", "k_d", "_t"])
leaves = st.one_of(
    names.map(Symbol),
    st.floats(min_value=0, max_value=1e6, allow_nan=False, allow_infinity=False).map(Constant),
)


def _extend(children):
    return st.one_of(
        children.map(lambda c: Unary("neg", c)),
        st.tuples(st.sampled_from(["add", "sub", "mul", "div", "pow"]), children, children).map(lambda t: Binary(*t)),
        st.tuples(st.sampled_from(["exp", "ln", "sin", "cos", "sqrt", "abs"]), children).map(lambda t: Call(t[0], (t[1],))),
        st.tuples(st.sampled_from(["min", "max"]), st.lists(children, min_size=2, max_size=3)).map(
            lambda t: Call(t[0], tuple(t[1]))
        ),
    )


trees = st.recursive(leaves, _extend, max_leaves=12)


@settings(max_examples=300, deadline=None)
@given(trees)
def test_unparse_parse_round_trip(tree):
    text = unparse(tree)
    assert parse_expr(text) == tree
    assert unparse(parse_expr(text)) == text


@settings(max_examples=200, deadline=None)
@given(trees)
def test_free_symbols_sufficient_for_evaluation(tree):
    env = {s: 0.5 for s in free_symbols(tree)}
    try:
        eval_expr(tree, env)
    except DomainError:
        pass


@pytest.mark.parametrize("text", ["sin(exp(710))", "cos(-exp(710))"])
def test_trig_of_infinity_is_domain_error(text):
    with pytest.raises(DomainError):
        eval_expr(parse_expr(text), {})
