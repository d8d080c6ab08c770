import itertools
import math

import numpy as np
import pytest

from conftest import random_affine_model, random_interior_point

from mfgdyn.examples import ConsumerChoiceParams, consumer_choice_thresholds
from mfgdyn.mdp import (best_response, brute_force_value_oracle, g_value,
                        optimal_value, policy_value, q_ceilings)
from mfgdyn.model import make_model


def _zero_generator_model():
    # no transitions at all; value is reward / beta
    return make_model(["1", "2", "3"], ["a"], 0.5,
                      [[["0", "0", "0"], ["0", "0", "0"], ["0", "0", "0"]]],
                      [["1", "1", "0"]])


def test_policy_value_zero_generator():
    model = _zero_generator_model()
    v = policy_value(model, [1 / 3, 1 / 3, 1 / 3], (0, 0, 0))
    assert np.allclose(v, [2.0, 2.0, 0.0], atol=1e-14)


def test_policy_value_consumer_choice_symmetric(consumer_choice):
    # equal rewards in both states make the value constant, so Q^d V = 0
    v = policy_value(consumer_choice, [0.5, 0.5], (0, 0))
    expected = math.log(0.5) / 0.5
    assert np.allclose(v, [expected, expected], atol=1e-12)
    assert expected == pytest.approx(-1.386294, abs=1e-6)


def test_policy_value_matches_independent_solver():
    rng = np.random.default_rng(21)
    for _ in range(20):
        model = random_affine_model(rng, state_count=3)
        m = random_interior_point(rng, 3)
        d = tuple(rng.integers(0, model.action_count, 3))
        v = policy_value(model, m, d)
        # independent route: SVD least squares on the same linear system
        q, r = model.q_r(m)
        idx = np.arange(3)
        a_mat = model.beta * np.eye(3) - q[list(d), idx, :]
        v_ref = np.linalg.lstsq(a_mat, r[list(d), idx], rcond=None)[0]
        assert np.abs(v - v_ref).max() <= 1e-9


def test_optimal_value_dominant_action():
    model = make_model(
        ["1", "2"], ["good", "bad"], 0.5,
        [[["-1", "1"], ["1", "-1"]], [["-1", "1"], ["1", "-1"]]],
        [["m1", "m2"], ["m1 - 1000", "m2 - 1000"]])
    m = [0.3, 0.7]
    assert np.allclose(optimal_value(model, m), policy_value(model, m, (0, 0)),
                       atol=1e-12)


def test_optimal_value_consumer_choice_below_k1(consumer_choice):
    k1, _ = consumer_choice_thresholds(ConsumerChoiceParams())
    m = [k1 - 0.05, 1 - (k1 - 0.05)]
    # below the lower threshold the optimum is (change, stay)
    d_cs = consumer_choice.strategy_from_labels("change,stay")
    assert np.allclose(optimal_value(consumer_choice, m),
                       policy_value(consumer_choice, m, d_cs), atol=1e-12)
    br = best_response(consumer_choice, m)
    assert br.is_unique and br.unique_strategy() == d_cs


def test_optimal_value_equals_brute_force_on_random_models():
    rng = np.random.default_rng(5)
    for _ in range(200):
        model = random_affine_model(rng)
        m = random_interior_point(rng, model.state_count)
        v = optimal_value(model, m)
        v_ref = brute_force_value_oracle(model, m)
        assert np.abs(v - v_ref).max() <= 1e-9


def test_optimal_dominates_every_policy():
    rng = np.random.default_rng(17)
    for _ in range(50):
        model = random_affine_model(rng)
        m = random_interior_point(rng, model.state_count)
        v_star = optimal_value(model, m)
        for d in itertools.product(range(model.action_count),
                                   repeat=model.state_count):
            assert np.all(v_star - policy_value(model, m, d) >= -1e-9)


def test_optimality_equation_residual():
    rng = np.random.default_rng(23)
    for _ in range(50):
        model = random_affine_model(rng)
        m = random_interior_point(rng, model.state_count)
        v_star = optimal_value(model, m)
        scores = q_ceilings(model, m, v_star)
        residual = np.abs(scores.max(axis=0) - model.beta * v_star).max()
        assert residual <= 1e-8


def test_brute_force_cap():
    model = _zero_generator_model()
    from mfgdyn.mdp import SolverError
    with pytest.raises(SolverError):
        brute_force_value_oracle(model, [1 / 3, 1 / 3, 1 / 3], cap=0)


def test_best_response_full_tie():
    model = make_model(
        ["1", "2"], ["a", "b"], 0.5,
        [[["-1", "1"], ["1", "-1"]], [["-1", "1"], ["1", "-1"]]],
        [["m1", "m2"], ["m1", "m2"]])
    br = best_response(model, [0.4, 0.6])
    assert br.optimal_actions == ((0, 1), (0, 1))
    assert br.size == 4
    assert set(br.strategies()) == {(0, 0), (0, 1), (1, 0), (1, 1)}


def test_best_response_between_thresholds(consumer_choice):
    br = best_response(consumer_choice, [0.5, 0.5])
    assert br.is_unique
    assert br.unique_strategy() == consumer_choice.strategy_from_labels("stay,stay")


def test_best_response_at_lower_threshold(consumer_choice):
    k1, _ = consumer_choice_thresholds(ConsumerChoiceParams())
    br = best_response(consumer_choice, [k1, 1 - k1])
    stay = consumer_choice.actions.index("stay")
    change = consumer_choice.actions.index("change")
    assert set(br.optimal_actions[0]) == {stay, change}
    assert br.optimal_actions[1] == (stay,)
    assert br.size == 2


def test_best_response_monotone_in_tolerance(consumer_choice):
    rng = np.random.default_rng(9)
    for _ in range(20):
        m = random_interior_point(rng, 2)
        small = best_response(consumer_choice, m, tau_opt=1e-12)
        large = best_response(consumer_choice, m, tau_opt=1e-3)
        for acts_small, acts_large in zip(small.optimal_actions,
                                          large.optimal_actions):
            assert set(acts_small) <= set(acts_large)


def test_g_value_same_strategy_is_zero(congestion):
    d = congestion.strategy_from_labels("change,stay,stay")
    assert g_value(congestion, d, d, [0.3, 0.3, 0.4]) == 0.0


def test_g_value_congestion_symmetry(congestion):
    # swapping states 1 and 2 maps the two strategies onto each other
    d1 = congestion.strategy_from_labels("change,stay,stay")
    d2 = congestion.strategy_from_labels("stay,change,stay")
    assert g_value(congestion, d1, d2, [0.3, 0.3, 0.4]) == pytest.approx(0.0, abs=1e-12)
    assert g_value(congestion, d1, d2, [0.4, 0.2, 0.4]) != pytest.approx(0.0, abs=1e-6)
