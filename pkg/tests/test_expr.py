import math
import random

import pytest

from tsvar import EvalDomainError
from tsvar.expr import (Bin, Call, ExprSyntaxError, Neg, Num,
                        UnknownIdentifier, Var, evaluate, parse, to_source)

ENV = {"x", "y1", "Dy1", "yd1", "Dyd1", "u1", "p"}


def py_reference(e, bindings):
    """Independent evaluator: translate to Python source and eval().

    Returns the float value, or the string 'error' when Python's own
    semantics leave the real domain.
    """
    src = _py_src(e)
    ns = {"sin": math.sin, "cos": math.cos, "exp": math.exp, "log": math.log,
          "sqrt": math.sqrt, "abs": abs}
    ns.update(bindings)
    try:
        val = eval(src, {"__builtins__": {}}, ns)  # noqa: S307 - test oracle
    except (ZeroDivisionError, ValueError, OverflowError):
        return "error"
    if isinstance(val, complex):
        return "error"
    return float(val)


def _py_src(e):
    if isinstance(e, Num):
        return f"({e.value!r})"
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Neg):
        return f"(-{_py_src(e.operand)})"
    if isinstance(e, Call):
        return f"{e.fn}({_py_src(e.arg)})"
    op = "**" if e.op == "^" else e.op
    return f"({_py_src(e.lhs)}{op}{_py_src(e.rhs)})"


def random_tree(rng, depth):
    roll = rng.random()
    if depth <= 0 or roll < 0.25:
        if rng.random() < 0.5:
            return Num(round(rng.uniform(0, 10), 3))
        return Var(rng.choice(sorted(ENV)))
    if roll < 0.35:
        return Neg(random_tree(rng, depth - 1))
    if roll < 0.45:
        return Call(rng.choice(["sin", "cos", "exp", "log", "sqrt", "abs"]),
                    random_tree(rng, depth - 1))
    op = rng.choice(["+", "-", "*", "/", "^"])
    lhs = random_tree(rng, depth - 1)
    # keep exponents small so both evaluators stay in float range
    rhs = Num(float(rng.randint(0, 3))) if op == "^" else random_tree(rng, depth - 1)
    return Bin(op, lhs, rhs)


# -- parsing ------------------------------------------------------------------

def test_lagrangian_expression_parses():
    node = parse("0.5*Dy1^2 - 0.5*yd1^2", ENV)
    assert isinstance(node, Bin) and node.op == "-"


def test_power_is_right_associative():
    assert evaluate(parse("2^3^2", ENV), {}) == 512.0


def test_unknown_identifier_offset():
    with pytest.raises(UnknownIdentifier) as info:
        parse("0.5*Dz^2", ENV)
    assert info.value.name == "Dz"
    assert info.value.position == 4


@pytest.mark.parametrize("src,expected", [
    ("x + 1", 3.0),
    ("exp(0)", 1.0),
    ("-2^2", -4.0),
    ("2^-3", 0.125),
    ("(1+2)*3", 9.0),
    ("2*3+4", 10.0),
    ("1 - 2 - 3", -4.0),
    ("12/4/3", 1.0),
    ("  x  *  x ", 4.0),
    ("abs(0-x)", 2.0),
])
def test_evaluation_cases(src, expected):
    assert evaluate(parse(src, ENV), {"x": 2.0}) == pytest.approx(expected, rel=1e-15)


@pytest.mark.parametrize("src", [
    "sqrt(-1)", "log(0)", "log(-2)", "1/0", "x/(x-x)", "(0-2)^0.5", "0^-1",
    "exp(1000)",
])
def test_domain_errors(src):
    with pytest.raises(EvalDomainError):
        evaluate(parse(src, ENV), {"x": 2.0})


@pytest.mark.parametrize("src,pos", [
    ("1 +", 3),
    ("(1+2", 4),
    ("1 ** 2", 3),
    ("sin 1", 4),
    ("1 $ 2", 2),
    ("", 0),
    ("1 2", 2),
])
def test_syntax_error_positions(src, pos):
    with pytest.raises(ExprSyntaxError) as info:
        parse(src, ENV)
    assert info.value.position == pos


def test_deep_nesting_is_rejected_not_crashed():
    for probe in ("(" * 5000 + "1" + ")" * 5000,
                  "-" * 5000 + "x",
                  "2^" * 5000 + "2"):
        with pytest.raises(ExprSyntaxError):
            parse(probe, ENV)


def test_reasonable_nesting_accepted():
    src = "(" * 100 + "x" + ")" * 100
    assert evaluate(parse(src, ENV), {"x": 7.0}) == 7.0


# -- round trip ---------------------------------------------------------------

def test_round_trip_hand_cases():
    for src in ("0.5*Dy1^2 - 0.5*yd1^2", "2^3^2", "-x^2", "x*-y1",
                "(x+1)*(x-1)", "exp(x)/cos(x)", "-(x+1)", "2^-3",
                "x-(y1-u1)", "(2^3)^2"):
        a = parse(src, ENV)
        assert parse(to_source(a), ENV) == a


def test_round_trip_random_trees():
    rng = random.Random(99)
    for _ in range(500):
        tree = random_tree(rng, 6)
        assert parse(to_source(tree), ENV) == tree


# -- reference agreement -------------------------------------------------------

def test_agreement_with_python_reference():
    rng = random.Random(7)
    bindings = {"x": 1.5, "y1": -0.75, "Dy1": 2.25, "yd1": 0.5, "Dyd1": -1.0,
                "u1": 3.0, "p": 0.125}
    checked = 0
    for _ in range(1000):
        tree = random_tree(rng, 6)
        ref = py_reference(tree, bindings)
        try:
            got = evaluate(tree, bindings)
        except EvalDomainError:
            got = "error"
        if ref == "error" or got == "error":
            assert ref == got
        else:
            assert got == pytest.approx(ref, rel=1e-15, abs=1e-300)
            checked += 1
    assert checked > 300


# -- fuzzing -------------------------------------------------------------------

def test_fuzz_never_crashes():
    rng = random.Random(1234)
    pool = "0123456789.+-*/^()abcxyDu_ \t\nqwerty$#~\\\"'"
    for _ in range(5000):
        size = rng.randint(0, 256)
        src = "".join(rng.choice(pool) for _ in range(size))
        try:
            node = parse(src, ENV)
            evaluate(node, {v: 1.0 for v in ENV})
        except (ExprSyntaxError, UnknownIdentifier, EvalDomainError):
            pass


def test_fuzz_large_inputs():
    rng = random.Random(4321)
    pool = "0123456789.+-*/^()x "
    for _ in range(20):
        src = "".join(rng.choice(pool) for _ in range(64 * 1024))
        try:
            parse(src, ENV)
        except (ExprSyntaxError, UnknownIdentifier):
            pass
