import math

import numpy as np
import pytest

from mfgdyn.dynamics import (FieldPolytope, field_polytope, integrate,
                             mixed_vector_field, sliding_coefficient,
                             vector_field)
from mfgdyn.examples import (CongestionParams, ConsumerChoiceParams,
                             congestion_fixed_point,
                             congestion_riccati_reference,
                             consumer_choice_thresholds)
from mfgdyn.mdp import best_response, g_value
from mfgdyn.model import make_model, one_hot_strategy


def test_vector_field_zero_at_stationary_point(consumer_choice):
    d = consumer_choice.strategy_from_labels("stay,stay")
    f = vector_field(consumer_choice, [0.5, 0.5], d)
    assert np.abs(f).max() <= 1e-15


def test_vector_field_consumer_choice_display(consumer_choice):
    # (-eps m1 + eps m2, eps m1 - eps m2) at (0.3, 0.7), eps = 0.1
    d = consumer_choice.strategy_from_labels("stay,stay")
    f = vector_field(consumer_choice, [0.3, 0.7], d)
    assert np.allclose(f, [0.04, -0.04], atol=1e-15)


def test_vector_field_congestion_hand_expansion(congestion):
    # d = (change, stay, *) at m = (0.4, 0.4, 0.2) with b=e=1, eps=0.5, lam=1:
    # row1(change) = (-1.9, 1, 0.9), row2(stay) = (0, -0.9, 0.9),
    # row3 = (1, 1, -2); f_j = sum_i m_i row_i[j]
    d = congestion.strategy_from_labels("change,stay,stay")
    f = vector_field(congestion, [0.4, 0.4, 0.2], d)
    assert np.allclose(f, [-0.56, 0.24, 0.32], atol=1e-15)


def test_field_sums_to_zero(congestion):
    rng = np.random.default_rng(3)
    for _ in range(50):
        m = rng.dirichlet(np.ones(3))
        d = tuple(rng.integers(0, 2, 3))
        assert abs(vector_field(congestion, m, d).sum()) <= 1e-12


def test_field_polytope_unique_region(consumer_choice):
    poly = field_polytope(consumer_choice, [0.5, 0.5])
    assert isinstance(poly, FieldPolytope)
    assert poly.size == 1
    assert poly.vertices[0][0] == consumer_choice.strategy_from_labels("stay,stay")


def test_field_polytope_at_threshold(consumer_choice, cc_params):
    k1, _ = consumer_choice_thresholds(cc_params)
    m = np.array([k1, 1 - k1])
    poly = field_polytope(consumer_choice, m)
    assert poly.size == 2
    fields = {d: f for d, f in poly.vertices}
    d_cs = consumer_choice.strategy_from_labels("change,stay")
    d_ss = consumer_choice.strategy_from_labels("stay,stay")
    b, eps = 1.0, 0.1
    assert np.allclose(fields[d_cs], [-b * k1 + eps * (1 - k1),
                                      b * k1 - eps * (1 - k1)], atol=1e-9)
    assert np.allclose(fields[d_ss], [eps * (1 - 2 * k1),
                                      -eps * (1 - 2 * k1)], atol=1e-9)
    for _, f in poly.vertices:
        assert abs(f.sum()) <= 1e-10


def test_field_polytope_full_tie():
    model = make_model(
        ["1", "2"], ["a", "b"], 0.5,
        [[["-1", "1"], ["1", "-1"]], [["-1", "1"], ["1", "-1"]]],
        [["m1", "m2"], ["m1", "m2"]])
    poly = field_polytope(model, [0.4, 0.6])
    assert poly.size == 4  # A^S tagged vertices
    base = poly.vertices[0][1]
    for _, f in poly.vertices:
        assert np.array_equal(f, base)  # rates are action-independent


def test_sliding_coefficient_cases():
    grad = np.array([1.0, 0.0])
    f_up = np.array([1.0, 0.0])
    f_down = np.array([-1.0, 0.0])
    assert sliding_coefficient(f_up, f_down, grad) == pytest.approx(0.5)
    lam = sliding_coefficient(np.array([3.0, 0.0]), f_down, grad)
    assert lam == pytest.approx(0.25)
    combo = lam * np.array([3.0, 0.0]) + (1 - lam) * f_down
    assert abs(combo @ grad) <= 1e-15
    assert sliding_coefficient(f_up, np.array([0.0, 1.0]), grad) == pytest.approx(0.0)
    with pytest.raises(ValueError):
        sliding_coefficient(f_up, np.array([2.0, 0.0]), grad)


def test_integrate_constant_at_equilibrium(consumer_choice):
    traj = integrate(consumer_choice, [0.5, 0.5], horizon=10.0,
                     sample_times=(1.0, 10.0))
    assert traj.termination == "converged"
    assert np.abs(traj.states - np.array([0.5, 0.5])).max() <= 1e-12


def test_integrate_consumer_choice_linear_oracle(consumer_choice):
    traj = integrate(consumer_choice, [0.48, 0.52], horizon=25.0,
                     sample_times=(1.0, 5.0, 20.0))
    assert traj.termination in ("horizon", "converged")
    assert all(mode in ("interior", "converged") for mode in traj.modes)
    for t in (1.0, 5.0, 20.0):
        want = 0.5 + (0.48 - 0.5) * math.exp(-2 * 0.1 * t)
        assert traj.state_at(t)[0] == pytest.approx(want, abs=1e-6)


def test_integrate_congestion_sliding(congestion, cg_params):
    traj = integrate(congestion, [0.1, 0.1, 0.8], horizon=100.0,
                     sample_times=(1.0, 5.0, 20.0))
    assert "sliding" in traj.modes
    for t in (1.0, 5.0, 20.0):
        want = congestion_riccati_reference(cg_params, 0.1, t)
        assert traj.state_at(t)[0] == pytest.approx(want, abs=1e-6)
    fixed = np.array(congestion_fixed_point(cg_params))
    assert np.abs(traj.terminal_state - fixed).max() <= 1e-5

    sliding_idx = [i for i, mode in enumerate(traj.modes) if mode == "sliding"]
    d1, d2 = traj.strategies[sliding_idx[0]]
    for i in sliding_idx:
        assert abs(g_value(congestion, d1, d2, traj.states[i])) <= 1e-7

    # recorded mixing implies equal effective change rates in states 1 and 2
    change = congestion.actions.index("change")
    for i in sliding_idx:
        lam = traj.lambdas[i]
        if math.isnan(lam):
            continue
        pi_1 = lam * (d1[0] == change) + (1 - lam) * (d2[0] == change)
        pi_2 = lam * (d1[1] == change) + (1 - lam) * (d2[1] == change)
        assert abs(pi_1 - pi_2) <= 1e-8


def test_integrate_congestion_off_diagonal_switches(congestion, cg_params):
    traj = integrate(congestion, [0.4, 0.2, 0.4], horizon=50.0)
    assert [s.mode for s in traj.segments][:2] == ["interior", "sliding"]
    switch_t = traj.segments[0].t_end
    assert switch_t > 0.01
    # at the switch the trajectory is on the symmetric surface
    switch_state = traj.state_at(switch_t)
    assert abs(switch_state[0] - switch_state[1]) <= 1e-7
    fixed = np.array(congestion_fixed_point(cg_params))
    assert np.abs(traj.terminal_state - fixed).max() <= 1e-5


def test_trajectory_invariants(consumer_choice, congestion):
    cases = [
        (consumer_choice, [0.48, 0.52]),
        (consumer_choice, [0.1, 0.9]),
        (congestion, [0.4, 0.2, 0.4]),
        (congestion, [0.1, 0.1, 0.8]),
    ]
    for model, m0 in cases:
        traj = integrate(model, m0, horizon=30.0)
        assert traj.termination in ("horizon", "converged")
        assert np.all(np.diff(traj.times) > 0)
        sums = traj.states.sum(axis=1)
        assert np.abs(sums - 1.0).max() <= 1e-9
        assert traj.states.min() >= 0.0
        for i, mode in enumerate(traj.modes):
            strategies = traj.strategies[i]
            if mode == "sliding":
                lam = traj.lambdas[i]
                f1 = vector_field(model, traj.states[i], strategies[0])
                f2 = vector_field(model, traj.states[i], strategies[1])
                combo = lam * f1 + (1 - lam) * f2
                assert abs(combo.sum()) <= 1e-12
            else:
                f = vector_field(model, traj.states[i], strategies[0])
                assert abs(f.sum()) <= 1e-12


def test_interior_samples_stay_best_responses(consumer_choice):
    traj = integrate(consumer_choice, [0.48, 0.52], horizon=20.0)
    for i, mode in enumerate(traj.modes):
        if mode != "interior":
            continue
        br = best_response(consumer_choice, traj.states[i])
        assert br.contains(traj.strategies[i][0])


def test_tolerance_halving_consistency(congestion):
    base = integrate(congestion, [0.4, 0.2, 0.4], horizon=10.0,
                     sample_times=(10.0,), rtol=1e-9, atol=1e-9)
    tight = integrate(congestion, [0.4, 0.2, 0.4], horizon=10.0,
                      sample_times=(10.0,), rtol=5e-10, atol=5e-10)
    drift = np.abs(base.state_at(10.0) - tight.state_at(10.0)).max()
    assert drift <= 10 * 1e-9


def test_unresolved_branching_reported():
    # two states tie simultaneously with four non-collinear candidate fields
    model = make_model(
        ["1", "2", "3"], ["a", "b"], 0.5,
        [
            [["-1", "1", "0"], ["1", "-1", "0"], ["0.5", "0.5", "-1"]],
            [["-1", "0", "1"], ["0", "-1", "1"], ["0.5", "0.5", "-1"]],
        ],
        [["0", "0", "0"], ["0", "0", "0"]])
    traj = integrate(model, [0.5, 0.3, 0.2], horizon=5.0)
    assert traj.termination == "unresolved-branching"
    assert "conflicting" in traj.message


def test_csv_roundtrip(tmp_path, congestion):
    traj = integrate(congestion, [0.1, 0.1, 0.8], horizon=10.0,
                     sample_times=(1.0, 5.0))
    path = tmp_path / "traj.csv"
    traj.write_csv(path, congestion)
    lines = path.read_text().strip().split("\n")
    assert lines[0] == "t,m1,m2,m3,mode,strategy,lambda"
    assert len(lines) == len(traj.times) + 1
    for line in lines[1:]:
        parts = line.split(",")
        m = np.array([float(x) for x in parts[1:4]])
        assert m.min() >= 0.0 and abs(m.sum() - 1.0) <= 1e-9
        assert parts[4] in ("interior", "sliding", "converged")
    sliding_rows = [ln for ln in lines[1:] if ",sliding," in ln]
    assert sliding_rows and all(ln.rsplit(",", 1)[1] != "" for ln in sliding_rows)


def test_mixed_vector_field_matches_average(congestion):
    rng = np.random.default_rng(1)
    for _ in range(10):
        m = rng.dirichlet(np.ones(3))
        d1 = tuple(rng.integers(0, 2, 3))
        d2 = tuple(rng.integers(0, 2, 3))
        lam = rng.random()
        pi = lam * one_hot_strategy(congestion, d1) + (1 - lam) * one_hot_strategy(congestion, d2)
        f_mix = mixed_vector_field(congestion, m, pi)
        f_avg = lam * vector_field(congestion, m, d1) + (1 - lam) * vector_field(congestion, m, d2)
        assert np.abs(f_mix - f_avg).max() <= 1e-14
