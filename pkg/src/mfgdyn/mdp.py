"""Frozen-population Markov decision problem at a fixed distribution m.

With the population held at m, each agent faces a continuous-time MDP with
stationary rates Q_a(m) and rewards r_a(m) under discounting beta.  The
value of a deterministic stationary strategy d solves the linear system

    (beta I - Q^d(m)) V = r^d(m),

whose matrix is strictly diagonally dominant by columns (conservative
generator plus beta > 0), hence nonsingular.  The optimal value V* comes
from policy iteration over deterministic stationary strategies, and the
per-state optimal action sets define the best-response structure the
population dynamics are driven by.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from . import tolerances as tol
from .model import check_strategy


class SolverError(Exception):
    """Linear algebra failed; the model invariants are likely violated."""


def _strategy_system(model, m, d):
    q, r = model.q_r(m)
    idx = np.arange(model.state_count)
    return q[list(d), idx, :], r[list(d), idx]


def _solve_value(model, q_d, r_d):
    a = model.beta * np.eye(model.state_count) - q_d
    try:
        return np.linalg.solve(a, r_d)
    except np.linalg.LinAlgError as exc:
        raise SolverError(f"singular value system: {exc}") from exc


def policy_value(model, m, d):
    """Expected discounted reward per starting state under strategy ``d``."""
    d = check_strategy(model, d)
    q_d, r_d = _strategy_system(model, m, d)
    return _solve_value(model, q_d, r_d)


def mixed_policy_value(model, m, pi):
    """Value vector for a stationary mixed strategy (rows of pi over actions)."""
    q, r = model.q_r(m)
    q_pi = np.einsum("ia,aij->ij", pi, q)
    r_pi = np.einsum("ia,ai->i", pi, r)
    return _solve_value(model, q_pi, r_pi)


def q_ceilings(model, m, values, q=None, r=None):
    """Action scores q[a, i] = r_a(m) + Q_a(m) V, the policy-improvement
    quantity; V* makes their per-state max equal beta V*."""
    if q is None or r is None:
        q, r = model.q_r(m)
    return r + np.einsum("aij,j->ai", q, values)


def _policy_iteration(model, m, d0=None, improve_tol=tol.IMPROVE):
    S, A = model.state_count, model.action_count
    q, r = model.q_r(m)
    idx = np.arange(S)
    d = np.asarray(d0 if d0 is not None else [0] * S, dtype=np.intp)
    values = _solve_value(model, q[d, idx, :], r[d, idx])
    for _ in range(A ** S + 2):
        scores = r + np.einsum("aij,j->ai", q, values)
        best = np.argmax(scores, axis=0)  # ties resolve to the lowest index
        improves = scores[best, idx] > scores[d, idx] + improve_tol
        if not improves.any():
            return values, tuple(int(a) for a in d)
        d = np.where(improves, best, d)
        values = _solve_value(model, q[d, idx, :], r[d, idx])
    raise SolverError("policy iteration failed to terminate")


def optimal_value(model, m, d0=None, improve_tol=tol.IMPROVE):
    """Optimal value vector V*(m); policy iteration, finite termination."""
    values, _ = _policy_iteration(model, m, d0, improve_tol)
    return values


def brute_force_value_oracle(model, m, cap=10 ** 6):
    """Componentwise max of every deterministic strategy's value.

    Test oracle for :func:`optimal_value`; refuses above ``cap`` strategies.
    """
    count = model.action_count ** model.state_count
    if count > cap:
        raise SolverError(f"{count} strategies exceed oracle cap {cap}")
    best = None
    for d in itertools.product(range(model.action_count), repeat=model.state_count):
        v = policy_value(model, m, d)
        best = v if best is None else np.maximum(best, v)
    return best


@dataclass(frozen=True, eq=False)
class BestResponseSet:
    """Per-state optimal action sets O_i(m) and their product structure."""

    optimal_actions: tuple   # tuple over states of sorted action-index tuples
    tol: float
    values: np.ndarray       # V*(m)
    scores: np.ndarray       # q[a, i]

    @property
    def size(self):
        return math.prod(len(acts) for acts in self.optimal_actions)

    @property
    def is_unique(self):
        return self.size == 1

    def strategies(self):
        """Iterate D(m) as action-index tuples (lexicographic)."""
        return itertools.product(*self.optimal_actions)

    def unique_strategy(self):
        if not self.is_unique:
            raise ValueError(f"{self.size} optimal strategies, not 1")
        return tuple(acts[0] for acts in self.optimal_actions)

    def contains(self, d):
        return all(d[i] in acts for i, acts in enumerate(self.optimal_actions))


def best_response(model, m, tau_opt=tol.OPT, d0=None):
    """O_i(m) per state: all actions within ``tau_opt`` of the best score."""
    values, d_star = _policy_iteration(model, m, d0)
    scores = q_ceilings(model, m, values)
    top = scores.max(axis=0)
    optimal = tuple(
        tuple(int(a) for a in np.flatnonzero(scores[:, i] >= top[i] - tau_opt))
        for i in range(model.state_count)
    )
    assert all(optimal[i] for i in range(model.state_count))
    return BestResponseSet(optimal, tau_opt, values, scores)


# --- two-strategy switching function ---------------------------------------


def g_value(model, d1, d2, m):
    """Summed value difference sum_i (V^{d2}_i - V^{d1}_i) at m.

    Its zero set is the switching surface between the regions where d1
    respectively d2 is the unique best response.  m may sit slightly
    outside the simplex (finite-difference stencils); expressions just need
    to evaluate there.
    """
    return float(np.sum(policy_value(model, m, d2) - policy_value(model, m, d1)))


def grad_g(model, d1, d2, m, h=tol.FD_STEP):
    """Central-difference gradient of :func:`g_value` in ambient coordinates."""
    m = np.asarray(m, dtype=np.float64)
    grad = np.empty(model.state_count)
    for k in range(model.state_count):
        step = np.zeros(model.state_count)
        step[k] = h
        grad[k] = (g_value(model, d1, d2, m + step)
                   - g_value(model, d1, d2, m - step)) / (2.0 * h)
    return grad
