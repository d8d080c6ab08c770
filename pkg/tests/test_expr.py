import math

import numpy as np
import pytest

from conftest import random_expr_text

from mfgdyn.expr import (Bin, Call, EvalError, Num, ParseError, Param, Var,
                         diff_expr, eval_expr, parse_expr, to_text)


def test_parse_simple_sum():
    assert parse_expr("m1 + m2", 2) == Bin("+", Var(1), Var(2))


def test_parse_builtin_call_with_params():
    e = parse_expr("slog(m1, 0.01) + s1 - c", 2, {"s1", "c"})
    assert e == Bin("-", Bin("+", Call("slog", (Var(1), Num(0.01))), Param("s1")),
                    Param("c"))


def test_parse_variable_out_of_range():
    with pytest.raises(ParseError, match="out of range"):
        parse_expr("m3", 2)


def test_parse_unknown_identifier():
    with pytest.raises(ParseError, match="unknown identifier"):
        parse_expr("m1 + zulu", 2)


def test_parse_wrong_arity():
    with pytest.raises(ParseError, match="argument"):
        parse_expr("min(m1)", 2)


def test_parse_unknown_function():
    with pytest.raises(ParseError, match="unknown function"):
        parse_expr("sin(m1)", 2)


def test_parse_reports_position():
    with pytest.raises(ParseError) as err:
        parse_expr("m1 + $", 2)
    assert err.value.position == 5


def test_left_associativity():
    assert eval_expr(parse_expr("8 - 3 - 2", 1), [1.0]) == 3.0
    assert eval_expr(parse_expr("8 / 4 / 2", 1), [1.0]) == 1.0


def test_constant_folding():
    assert parse_expr("2 * 3 + 1", 1) == Num(7.0)
    # folding must not swallow domain errors
    e = parse_expr("ln(0 - 1)", 1)
    with pytest.raises(EvalError):
        eval_expr(e, [1.0])


def test_eval_scaled_variable():
    assert eval_expr(parse_expr("2*m1", 2), [0.5, 0.5]) == 1.0


def test_eval_slog_below_joint():
    # smoothed argument at 0 is delta/2
    value = eval_expr(parse_expr("slog(0, 0.01)", 1), [1.0])
    assert value == pytest.approx(math.log(0.005), abs=1e-12)
    assert value == pytest.approx(-5.298317, abs=1e-6)


def test_eval_slog_above_joint():
    value = eval_expr(parse_expr("slog(0.5, 0.01)", 1), [1.0])
    assert value == pytest.approx(math.log(0.5), abs=1e-15)


def test_slog_c1_at_joint():
    # value and slope agree across the joint
    delta = 0.01
    below = eval_expr(parse_expr(f"slog({delta} - 1e-12, {delta})", 1), [1.0])
    above = eval_expr(parse_expr(f"slog({delta} + 1e-12, {delta})", 1), [1.0])
    assert below == pytest.approx(above, abs=1e-9)
    d_below = eval_expr(parse_expr(f"dslog({delta} - 1e-12, {delta})", 1), [1.0])
    d_above = eval_expr(parse_expr(f"dslog({delta} + 1e-12, {delta})", 1), [1.0])
    assert d_below == pytest.approx(d_above, rel=1e-8)
    assert d_above == pytest.approx(1.0 / delta, rel=1e-8)


def test_eval_domain_errors():
    with pytest.raises(EvalError):
        eval_expr(parse_expr("ln(m1 - 1)", 1), [0.5])
    with pytest.raises(EvalError):
        eval_expr(parse_expr("sqrt(m1 - 1)", 1), [0.5])
    with pytest.raises(EvalError):
        eval_expr(parse_expr("m1 / (m1 - m1)", 1), [0.5])


def test_diff_product():
    assert diff_expr(parse_expr("m1*m2", 2), 1) == Var(2)


def test_diff_constant_in_other_variable():
    assert diff_expr(parse_expr("m1", 2), 2) == Num(0.0)


def test_diff_slog_above_joint():
    d = diff_expr(parse_expr("slog(m1, 0.01)", 2), 1)
    assert eval_expr(d, [0.5, 0.5]) == pytest.approx(2.0, rel=1e-12)


def test_diff_min_max_tie_to_first():
    d_min = diff_expr(parse_expr("min(m1, m2)", 2), 1)
    d_max = diff_expr(parse_expr("max(m1, m2)", 2), 1)
    # at the tie both take the first argument's branch
    assert eval_expr(d_min, [0.5, 0.5]) == 1.0
    assert eval_expr(d_max, [0.5, 0.5]) == 1.0
    assert eval_expr(d_min, [0.4, 0.6]) == 1.0
    assert eval_expr(d_min, [0.6, 0.4]) == 0.0


def test_diff_matches_finite_differences():
    rng = np.random.default_rng(7)
    params = {"alpha": 0.7, "beta_p": 1.3}
    state_count = 3
    h = 1e-6
    checked = 0
    for _ in range(1000):
        text = random_expr_text(rng, state_count, params, depth=3)
        expr = parse_expr(text, state_count, params)
        m = rng.dirichlet(np.ones(state_count) * 4.0)
        k = int(rng.integers(1, state_count + 1))
        step = np.zeros(state_count)
        step[k - 1] = h
        try:
            up = eval_expr(expr, m + step, params)
            down = eval_expr(expr, m - step, params)
            symbolic = eval_expr(diff_expr(expr, k), m, params)
        except EvalError:
            continue
        fd = (up - down) / (2 * h)
        if not math.isfinite(fd) or abs(fd) > 1e6:
            continue
        assert symbolic == pytest.approx(fd, rel=1e-4, abs=1e-4), text
        checked += 1
    assert checked > 600


def test_roundtrip_parse_print_parse():
    rng = np.random.default_rng(11)
    params = {"alpha": 0.7, "beta_p": 1.3}
    for _ in range(500):
        text = random_expr_text(rng, 3, params, depth=4)
        ast = parse_expr(text, 3, params)
        assert parse_expr(to_text(ast), 3, params) == ast


def test_roundtrip_of_derivatives():
    rng = np.random.default_rng(13)
    params = {"alpha": 0.7, "beta_p": 1.3}
    for _ in range(200):
        text = random_expr_text(rng, 3, params, depth=3)
        d = diff_expr(parse_expr(text, 3, params), 1)
        assert parse_expr(to_text(d), 3, params) == d


def test_negative_literal_roundtrip():
    ast = parse_expr("3 - -2.0", 1)
    assert ast == Num(5.0)
    ast = parse_expr("m1 * -2", 1)
    assert parse_expr(to_text(ast), 1) == ast
