import numpy as np
import pytest

from mfgdyn.examples import (CongestionParams, ConsumerChoiceParams,
                             congestion_model, consumer_choice_model)
from mfgdyn.model import make_model


@pytest.fixture(scope="session")
def consumer_choice():
    return consumer_choice_model()


@pytest.fixture(scope="session")
def congestion():
    return congestion_model()


@pytest.fixture(scope="session")
def cc_params():
    return ConsumerChoiceParams()


@pytest.fixture(scope="session")
def cg_params():
    return CongestionParams()


def random_affine_model(rng, state_count=None, action_count=None):
    """Random model with affine rates (nonnegative coefficients off-diagonal,
    diagonals balancing the rows symbolically) and affine any-sign rewards;
    passes validation by construction."""
    S = int(state_count if state_count is not None else rng.integers(2, 4))
    A = int(action_count if action_count is not None else rng.integers(1, 4))

    def affine(nonneg):
        lo = 0.0 if nonneg else -2.0
        c0 = round(float(rng.uniform(lo, 2.0)), 6)
        terms = [repr(c0)]
        for k in range(S):
            if rng.random() < 0.5:
                continue
            coef = round(float(rng.uniform(lo, 1.5)), 6)
            if coef == 0.0:
                continue
            terms.append(f"{coef!r}*m{k + 1}" if coef >= 0 or nonneg
                         else f"({coef!r})*m{k + 1}")
        return " + ".join(terms)

    q = []
    for _ in range(A):
        rows = []
        for i in range(S):
            entries = [affine(nonneg=True) if j != i else None for j in range(S)]
            off = [e for j, e in enumerate(entries) if j != i]
            entries[i] = "-(" + " + ".join(f"({e})" for e in off) + ")"
            rows.append(entries)
        q.append(rows)
    r = [[affine(nonneg=False) for _ in range(S)] for _ in range(A)]
    beta = round(float(rng.uniform(0.2, 0.9)), 6)
    states = [str(i + 1) for i in range(S)]
    actions = [chr(ord("a") + a) for a in range(A)]
    return make_model(states, actions, beta, q, r)


def random_interior_point(rng, state_count):
    return rng.dirichlet(np.ones(state_count) * 3.0)


def random_expr_text(rng, state_count, params, depth):
    """Random well-formed expression source (for parser/kernel fuzzing)."""
    roll = rng.random()
    if depth <= 0 or roll < 0.25:
        kind = rng.integers(0, 3 if params else 2)
        if kind == 0:
            return repr(round(float(rng.uniform(0.1, 3.0)), 4))
        if kind == 1:
            return f"m{rng.integers(1, state_count + 1)}"
        return str(rng.choice(sorted(params)))
    sub = lambda: random_expr_text(rng, state_count, params, depth - 1)
    op = rng.integers(0, 8)
    if op < 4:
        return f"({sub()}) {'+-*/'[op]} ({sub()})"
    if op == 4:
        return f"exp(min({sub()}, 2))"
    if op == 5:
        return f"ln({sub()} + 4)"
    if op == 6:
        return f"sqrt({sub()} + 4)"
    return f"slog({sub()}, 0.01)"


def minority_game_model():
    """Two states, two relocation actions, crowding-penalized rewards with a
    tie-breaking offset: no deterministic strategy is optimal at its own
    stationary distribution."""
    return make_model(
        states=("1", "2"),
        actions=("go1", "go2"),
        beta=0.5,
        q=[
            [["-eps", "eps"], ["b", "-b"]],
            [["-b", "b"], ["eps", "-eps"]],
        ],
        r=[
            ["-m1", "-m2 + 0.05"],
            ["-m1", "-m2 + 0.05"],
        ],
        params={"b": 1.0, "eps": 0.1},
    )
