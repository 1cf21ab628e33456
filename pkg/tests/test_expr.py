import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from riskbounds.expr import (BinOp, Call, Const, ExprDomainError, ExprSyntaxError, Neg, Param,
                             UnknownIdentifierError, Var, evaluate, parse, to_source)


def test_product_of_parameter_and_state():
    e = parse("r*x", ["r"])
    assert e.ast == BinOp("*", Param("r"), Var())


def test_power_with_parameter_exponent():
    e = parse("x^(-2*r/(v*v))", ["r", "v"])
    assert isinstance(e.ast, BinOp) and e.ast.op == "^"
    assert e.free_parameters() == {"r", "v"}
    assert evaluate(e, 2.0, {"r": 0.05, "v": 0.2}) == pytest.approx(2.0**-2.5)


def test_incomplete_expression_reports_offset():
    with pytest.raises(ExprSyntaxError) as info:
        parse("x +")
    assert info.value.position == 3


def test_unknown_identifier():
    with pytest.raises(UnknownIdentifierError) as info:
        parse("a*x", ["b"])
    assert info.value.name == "a"


@pytest.mark.parametrize("src, x, b, expected", [
    ("r*x", 2.0, {"r": 0.05}, 0.10),
    ("x^(-2.5)", 1.0, {}, 1.0),
    ("-x^2", 3.0, {}, -9.0),
    ("2^3^2", 0.0, {}, 512.0),
    ("2**3", 0.0, {}, 8.0),
    ("1 - 2 - 3", 0.0, {}, -4.0),
    ("8/4/2", 0.0, {}, 1.0),
    ("sqrt(x) + exp(0) + log(1) + abs(-x)", 4.0, {}, 7.0),
    ("kappa*(theta - x)", 0.02, {"kappa": 0.5, "theta": 0.05}, 0.015),
])
def test_evaluation(src, x, b, expected):
    assert evaluate(parse(src, b.keys()), x, b) == pytest.approx(expected, rel=1e-14)


@pytest.mark.parametrize("src, x", [("log(x)", 0.0), ("sqrt(x)", -1.0), ("1/x", 0.0),
                                    ("x^(-1)", 0.0), ("x^0.5", -2.0)])
def test_domain_errors(src, x):
    with pytest.raises(ExprDomainError):
        evaluate(parse(src), x)


def test_array_evaluation_matches_scalar():
    e = parse("v*x + sqrt(x)", ["v"])
    xs = np.linspace(0.1, 3.0, 7)
    arr = evaluate(e, xs, {"v": 0.2})
    assert np.allclose(arr, [evaluate(e, float(x), {"v": 0.2}) for x in xs], rtol=0, atol=0)


def test_constant_broadcasts_over_array():
    assert np.array_equal(evaluate(parse("0"), np.arange(4.0)), np.zeros(4))


# ------------------------------------------------------------ random corpus

names = st.sampled_from(["x", "a", "b"])
numbers = st.floats(min_value=0.0, max_value=10.0, allow_nan=False).map(lambda v: round(v, 3))


def _tree(children):
    return st.one_of(
        st.tuples(st.sampled_from("+-*/"), children, children).map(lambda t: BinOp(t[0], t[1], t[2])),
        children.map(Neg),
        st.tuples(st.sampled_from(["exp", "sqrt", "abs", "log"]), children).map(lambda t: Call(t[0], t[1])),
        st.tuples(children, st.sampled_from([2.0, 3.0, 0.5])).map(lambda t: BinOp("^", t[0], Const(t[1]))),
    )


leaves = st.one_of(numbers.map(Const), names.map(lambda n: Var() if n == "x" else Param(n)))
trees = st.recursive(leaves, _tree, max_leaves=12)


@settings(max_examples=200, deadline=None)
@given(trees)
def test_print_parse_round_trip(tree):
    text = to_source(tree)
    assert parse(text, ["a", "b"]).ast == tree


@settings(max_examples=200, deadline=None)
@given(trees, st.floats(min_value=-3.0, max_value=3.0))
def test_compiled_program_matches_tree_evaluation(tree, x):
    e = parse(to_source(tree), ["a", "b"])
    bindings = {"a": 0.7, "b": -1.3}
    prog = e.compile(bindings)
    got = prog(x)
    try:
        want = evaluate(e, x, bindings)
    except ExprDomainError:
        assert math.isnan(got)
        return
    if math.isnan(want):
        assert math.isnan(got)
    elif math.isinf(want):
        assert got == want
    else:
        assert got == pytest.approx(want, rel=1e-12, abs=1e-300)
