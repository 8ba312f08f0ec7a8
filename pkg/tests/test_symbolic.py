"""Expression trees: parsing, differentiation, banks, random generation.

Derivatives are checked against central finite differences at interior
points, so the symbolic rules never grade themselves.
"""

import numpy as np
import pytest

from dgnet import symbolic
from dgnet.symbolic import (DegenerateExpressionError, GenerationError,
                            ParseError, SymbolBank, laplacian, negate,
                            parse_expr, random_solution, symbol_bank, to_text)

rng = np.random.default_rng(42)


def test_parse_evaluates_arithmetic():
    assert parse_expr("1+2*3")(0.0, 0.0) == 7.0
    assert parse_expr("(1+2)*3")(0.0, 0.0) == 9.0
    assert parse_expr("2*3^2")(0.0, 0.0) == 18.0
    assert parse_expr("8/2/2")(0.0, 0.0) == 2.0
    assert parse_expr("1-2-3")(0.0, 0.0) == -4.0
    assert abs(parse_expr("sin(pi/2)")(0.0, 0.0) - 1.0) < 1e-15
    assert parse_expr("x^3")(2.0, 0.0) == 8.0
    assert parse_expr("0-x")(3.0, 0.0) == -3.0


def test_parse_vectorized_matches_scalar():
    e = parse_expr("sin(pi*x)*cos(y)+x^2/(y+2)")
    xs = rng.uniform(0, 1, 40)
    ys = rng.uniform(0, 1, 40)
    vec = e(xs, ys)
    for i in range(40):
        assert abs(vec[i] - e(float(xs[i]), float(ys[i]))) < 1e-14


def test_round_trip_through_text():
    texts = ["sin(pi*x)*sin(pi*y)", "exp(x*y)", "log(sin(pi*x)+1)",
             "x^4-3*y^2+1/2", "(x-x^2)*(y-y^2)", "sqrt(x+y+1)",
             "cos(2*pi*x*y)", "0-exp(0-x)"]
    xs = rng.uniform(0, 1, 25)
    ys = rng.uniform(0, 1, 25)
    for t in texts:
        e = parse_expr(t)
        back = parse_expr(to_text(e))
        assert np.allclose(e(xs, ys), back(xs, ys), rtol=0, atol=1e-15), t


def test_parse_errors_carry_position():
    for text, pos in [("sin(x", 5), ("1+*2", 2), ("", 0), ("x+", 2),
                      ("sin(x))", 6), ("foo(x)", 0)]:
        with pytest.raises(ParseError) as err:
            parse_expr(text)
        assert err.value.position == pos, (text, err.value.position)


def test_derivatives_match_finite_differences():
    texts = ["sin(pi*x)*sin(pi*y)", "exp(x*y)", "sqrt(x+y+1)",
             "log(sin(pi*x)+1)", "x^4*y", "cos(2*pi*x*y)",
             "(x^3-x^2)*(y^3-y^2)", "x/(y+2)"]
    h = 1e-6
    pts = rng.uniform(0.1, 0.9, size=(12, 2))
    for t in texts:
        e = parse_expr(t)
        dx = symbolic.differentiate(e, "x")
        dy = symbolic.differentiate(e, "y")
        for x, y in pts:
            fd_x = (e(x + h, y) - e(x - h, y)) / (2 * h)
            fd_y = (e(x, y + h) - e(x, y - h)) / (2 * h)
            assert abs(dx(x, y) - fd_x) < 1e-6 * max(1, abs(fd_x)), t
            assert abs(dy(x, y) - fd_y) < 1e-6 * max(1, abs(fd_y)), t


def test_laplacian_of_sinsin():
    # -lap(sin(pi x) sin(pi y)) = 2 pi^2 sin(pi x) sin(pi y)
    u = parse_expr("sin(pi*x)*sin(pi*y)")
    f = negate(laplacian(u))
    xs = rng.uniform(0, 1, 30)
    ys = rng.uniform(0, 1, 30)
    expect = 2 * np.pi ** 2 * np.sin(np.pi * xs) * np.sin(np.pi * ys)
    assert np.allclose(f(xs, ys), expect, rtol=1e-13, atol=1e-13)


def test_banks_have_expected_sizes():
    train = symbol_bank("train")
    test = symbol_bank("test")
    assert len(train.entries) == 31
    assert len(test.entries) == 14
    assert len(train.bubbles) == 4
    assert len(test.bubbles) == 4
    with pytest.raises(ValueError):
        symbol_bank("validation")


def test_bank_entries_finite_on_unit_square():
    g = np.linspace(0, 1, 21)
    X, Y = np.meshgrid(g, g, indexing="ij")
    for name in ("train", "test"):
        for e in symbol_bank(name).entries:
            assert np.all(np.isfinite(e(X, Y))), to_text(e)


def test_bubbles_vanish_on_boundary():
    edge = np.linspace(0, 1, 50)
    zero = np.zeros_like(edge)
    one = np.ones_like(edge)
    for b in symbol_bank("train").bubbles:
        for X, Y in [(zero, edge), (one, edge), (edge, zero), (edge, one)]:
            assert np.max(np.abs(b(X, Y))) < 1e-14, to_text(b)


def test_random_solution_is_scaled_and_deterministic():
    bank = symbol_bank("train")
    u1 = random_solution(np.random.default_rng(5), bank)
    u2 = random_solution(np.random.default_rng(5), bank)
    assert to_text(u1) == to_text(u2)
    g = np.linspace(0, 1, 101)
    X, Y = np.meshgrid(g, g, indexing="ij")
    vals = u1(X, Y)
    assert abs(np.max(np.abs(vals)) - 1.0) < 1e-12
    # the bubble factor kills the boundary
    assert np.max(np.abs(vals[0, :])) < 1e-13
    assert np.max(np.abs(vals[-1, :])) < 1e-13


def test_random_solution_varies_with_seed():
    bank = symbol_bank("train")
    texts = {to_text(random_solution(np.random.default_rng(s), bank))
             for s in range(20)}
    assert len(texts) > 10


def test_generation_error_on_hopeless_bank():
    dead = SymbolBank("dead", [parse_expr("0")],
                      [parse_expr("(x-x^2)*(y-y^2)")])
    with pytest.raises(GenerationError):
        random_solution(np.random.default_rng(0), dead, max_attempts=7)


def test_scale_rejects_degenerate():
    with pytest.raises(DegenerateExpressionError):
        symbolic.scale_to_unit_range(parse_expr("0*x"))
    with pytest.raises(DegenerateExpressionError):
        symbolic.scale_to_unit_range(parse_expr("log(x)"))  # -inf at x=0
