import math

import numpy as np
import pytest

from mfgdyn.examples import (BUILTIN_EXAMPLES, CongestionParams,
                             ConsumerChoiceParams, build_example,
                             congestion_fixed_point, congestion_model,
                             congestion_riccati_reference,
                             congestion_riccati_roots, consumer_choice_model,
                             consumer_choice_thresholds)
from mfgdyn.expr import eval_expr
from mfgdyn.mdp import g_value
from mfgdyn.model import validate_model


def test_consumer_choice_validates(consumer_choice):
    assert validate_model(consumer_choice, 1000).ok


def test_consumer_choice_change_rates(consumer_choice):
    q = consumer_choice.tables.q_only([0.3, 0.7])
    change = consumer_choice.actions.index("change")
    b = consumer_choice.params["b"]
    assert np.allclose(q[change], [[-b, b], [b, -b]], atol=1e-15)
    assert np.abs(q.sum(axis=2)).max() == 0.0


def test_consumer_choice_reward_value(consumer_choice):
    stay = consumer_choice.actions.index("stay")
    r = eval_expr(consumer_choice.r[stay][0], [0.5, 0.5], consumer_choice.params)
    assert r == pytest.approx(math.log(0.5), abs=1e-15)


def test_parameter_guards():
    with pytest.raises(ValueError, match="eps < b"):
        ConsumerChoiceParams(eps=2.0).validate()
    with pytest.raises(ValueError, match="beta"):
        CongestionParams(beta=1.0).validate()
    with pytest.raises(ValueError, match="positive"):
        CongestionParams(e=-1.0).validate()


def test_thresholds_symmetric_when_costless():
    params = ConsumerChoiceParams(c=1e-12, s1=0.3, s2=0.3)
    k1, k2 = consumer_choice_thresholds(params)
    assert k1 == pytest.approx(0.5, abs=1e-9)
    assert k2 == pytest.approx(0.5, abs=1e-9)


def test_thresholds_default_values():
    k1, k2 = consumer_choice_thresholds(ConsumerChoiceParams())
    assert k1 == pytest.approx(0.4611893, abs=1e-6)
    assert k2 == pytest.approx(0.5388107, abs=1e-6)
    assert k1 + k2 == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("params", [
    ConsumerChoiceParams(),
    ConsumerChoiceParams(c=0.1),
    ConsumerChoiceParams(c=0.4),
    ConsumerChoiceParams(b=2.0, eps=0.3),
    ConsumerChoiceParams(s1=0.1, s2=0.25),
])
def test_thresholds_match_mdp_bisection(params):
    model = consumer_choice_model(params)
    k1, k2 = consumer_choice_thresholds(params)
    d_cs = model.strategy_from_labels("change,stay")
    d_ss = model.strategy_from_labels("stay,stay")
    d_sc = model.strategy_from_labels("stay,change")

    def bisect(d_low, d_high, lo, hi):
        # g < 0 where d_low is optimal, > 0 where d_high is optimal
        def g_of(m1):
            return g_value(model, d_low, d_high, [m1, 1 - m1])
        assert g_of(lo) < 0 < g_of(hi)
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if g_of(mid) < 0:
                lo = mid
            else:
                hi = mid
        return 0.5 * (lo + hi)

    assert bisect(d_cs, d_ss, 0.01, 0.99) == pytest.approx(k1, abs=1e-6)
    assert bisect(d_ss, d_sc, 0.01, 0.99) == pytest.approx(k2, abs=1e-6)


def test_congestion_validates(congestion):
    assert validate_model(congestion, 1000).ok


def test_congestion_rewards_action_independent(congestion):
    for i in range(3):
        assert congestion.r[0][i] == congestion.r[1][i]
    _, r = congestion.q_r([0.2, 0.3, 0.5])
    assert np.allclose(r, [[1, 1, 0], [1, 1, 0]], atol=0)


def test_congestion_state_swap_symmetry(congestion):
    # permuting states 1,2 (and m1, m2) maps each rate table to itself
    rng = np.random.default_rng(2)
    perm = np.array([1, 0, 2])
    for _ in range(20):
        m = rng.dirichlet(np.ones(3))
        q = congestion.tables.q_only(m)
        q_swapped = congestion.tables.q_only(m[perm])
        for a in range(2):
            assert np.abs(q[a] - q_swapped[a][np.ix_(perm, perm)]).max() <= 1e-15


def test_riccati_reference_boundaries(cg_params):
    assert congestion_riccati_reference(cg_params, 0.1, 0.0) == 0.1
    u_plus, u_minus = congestion_riccati_roots(cg_params)
    assert u_plus == pytest.approx(0.35078105935821, abs=1e-12)
    assert u_minus < 0
    assert congestion_riccati_reference(cg_params, 0.1, 1e9) == pytest.approx(u_plus, abs=1e-12)
    fixed = congestion_fixed_point(cg_params)
    assert sum(fixed) == pytest.approx(1.0, abs=1e-15)
    with pytest.raises(ValueError):
        congestion_riccati_reference(cg_params, 0.7, 1.0)


def test_riccati_reference_against_independent_integration(cg_params):
    from scipy.integrate import solve_ivp
    e, eps, lam = cg_params.e, cg_params.eps, cg_params.lam

    def rhs(_t, u):
        return [-e * u[0] ** 2 - (eps + 2 * lam) * u[0] + lam]

    for m1_0 in (0.02, 0.1, 0.35, 0.5):
        sol = solve_ivp(rhs, (0.0, 2.0), [m1_0], rtol=1e-12, atol=1e-14,
                        dense_output=True)
        for t in (0.5, 1.0, 2.0):
            want = float(sol.sol(t)[0])
            got = congestion_riccati_reference(cg_params, m1_0, t)
            assert got == pytest.approx(want, abs=1e-9)


def test_build_example_overrides():
    model = build_example("congestion", {"e": 2.0})
    assert model.params["e"] == 2.0
    with pytest.raises(ValueError, match="unknown parameter"):
        build_example("congestion", {"zeta": 1.0})
    with pytest.raises(ValueError, match="unknown example"):
        build_example("nope")
    assert set(BUILTIN_EXAMPLES) == {"consumer-choice", "congestion"}
