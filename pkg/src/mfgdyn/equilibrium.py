"""Stationary equilibria: pairs (m, strategy) where the strategy is a best
response to m and m is invariant under the induced nonlinear chain.

Deterministic equilibria are enumerated by strategy: the stationary
distributions of each nonlinear chain Q^d(.) come from damped Newton on
the simplex (one coordinate eliminated), and a candidate is accepted when
d is optimal at its own stationary point.  Mixed equilibria are searched
on a two-strategy tie surface: the switching function, stationarity, and a
per-state mixing weight between the two strategies form the root system.
One-parameter solution families (detected by a rank-deficient Jacobian at
a root) are reported through evenly spaced samples of the free weight.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from . import tolerances as tol
from .dynamics import mixed_vector_field, population_jacobian
from .expr import EvalError
from .mdp import best_response, g_value, q_ceilings, _policy_iteration
from .model import (all_strategies, check_mixed_strategy, check_strategy,
                    one_hot_strategy, project_to_simplex, quasirandom_simplex,
                    simplex_vertices)


class NoRootError(Exception):
    def __init__(self, best_residual):
        super().__init__(f"no stationary point found (best residual {best_residual:.3e})")
        self.best_residual = best_residual


@dataclass(eq=False)
class FamilyReport:
    """Non-isolated solution set: Jacobian rank at the root and samples of
    the free mixing weight."""

    rank: int
    unknowns: int
    samples: list  # dicts with pin / m / mixing

    @property
    def rank_deficient(self):
        return self.rank < self.unknowns


@dataclass(eq=False)
class EquilibriumReport:
    m: np.ndarray
    kind: str                    # "deterministic" | "mixed"
    strategy: tuple = None       # deterministic strategies
    mixed: np.ndarray = None     # (S, A) for mixed strategies
    residual: float = math.nan
    optimality_ok: bool = False
    optimality_margin: float = math.nan
    unique_best_response: bool = False
    is_equilibrium: bool = False
    near_miss: bool = False
    family: FamilyReport = None

    def mixed_matrix(self, model):
        if self.kind == "deterministic":
            return one_hot_strategy(model, self.strategy)
        return self.mixed

    def to_dict(self, model):
        out = {
            "kind": self.kind,
            "m": [float(x) for x in self.m],
            "residual": float(self.residual),
            "optimality_ok": bool(self.optimality_ok),
            "optimality_margin": float(self.optimality_margin),
            "unique_best_response": bool(self.unique_best_response),
            "is_equilibrium": bool(self.is_equilibrium),
            "near_miss": bool(self.near_miss),
        }
        if self.kind == "deterministic":
            out["strategy"] = list(model.strategy_labels(self.strategy))
        else:
            out["strategy_matrix"] = [[float(x) for x in row] for row in self.mixed]
        if self.family is not None:
            out["family"] = {
                "rank": self.family.rank,
                "unknowns": self.family.unknowns,
                "rank_deficient": self.family.rank_deficient,
                "samples": self.family.samples,
            }
        return out


# --- stationary distributions ------------------------------------------------


def _newton_starts(model, n_quasi):
    return np.vstack([
        simplex_vertices(model.state_count),
        np.full((1, model.state_count), 1.0 / model.state_count),
        quasirandom_simplex(model.state_count, n_quasi),
    ])


def _reduced_newton(model, pi, m_start, newton_tol, max_iter=60):
    """Damped Newton for (Q^pi(m))^T m = 0 with m_S eliminated."""
    S = model.state_count
    u = np.asarray(m_start[:-1], dtype=np.float64).copy()

    def full(uu):
        m = np.append(uu, 1.0 - uu.sum())
        return m, mixed_vector_field(model, m, pi)

    try:
        m, h = full(u)
    except EvalError:
        return None, math.inf
    best = float(np.abs(h).sum())
    for _ in range(max_iter):
        res_norm = float(np.abs(h).sum())
        best = min(best, res_norm)
        if res_norm <= newton_tol:
            if m.min() < -tol.SIMPLEX_NEG or m.max() > 1.0 + tol.SIMPLEX_NEG:
                return None, best
            return project_to_simplex(np.clip(m, 0.0, None), sum_tol=1e-3), best
        jac = population_jacobian(model, m, pi)
        jac_red = jac[: S - 1, : S - 1] - jac[: S - 1, S - 1:S]
        rhs = -h[: S - 1]
        try:
            step = np.linalg.solve(jac_red, rhs)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(jac_red, rhs, rcond=None)[0]
        alpha = 1.0
        while alpha >= 1.0 / 4096:
            u_new = np.clip(u + alpha * step, -0.25, 1.25)
            try:
                m_new, h_new = full(u_new)
            except EvalError:
                alpha *= 0.5
                continue
            if float(np.abs(h_new).sum()) < (1.0 - 1e-4 * alpha) * res_norm:
                u, m, h = u_new, m_new, h_new
                break
            alpha *= 0.5
        else:
            return None, best
    return None, best


def _null_space_roots(model, pi):
    """Stationary distributions of a sampled-constant Q^pi via its transpose
    null space; empty when Q^pi actually depends on m."""
    probes = np.vstack([
        simplex_vertices(model.state_count),
        np.full((1, model.state_count), 1.0 / model.state_count),
        quasirandom_simplex(model.state_count, 3),
    ])
    tables = [np.einsum("ia,aij->ij", pi, model.tables.q_only(p)) for p in probes]
    base = tables[0]
    spread = max(float(np.abs(t - base).max()) for t in tables)
    if spread > tol.CONSTANT_Q:
        return []
    roots = []
    for col in scipy.linalg.null_space(base.T).T:
        col = np.real_if_close(col)
        total = col.sum()
        if abs(total) < 1e-12:
            continue
        cand = col / total
        if cand.min() >= -tol.SIMPLEX_NEG:
            roots.append(project_to_simplex(np.clip(cand, 0.0, None), sum_tol=1e-3))
    return roots


def stationary_distribution(model, pi, newton_tol=1e-13, dedup=tol.ROOT_DEDUP,
                            n_quasi=50):
    """All stationary distributions of the nonlinear chain Q^pi(.) found by
    the Newton grid (plus null-space extraction when Q^pi is constant)."""
    pi = check_mixed_strategy(model, pi)
    roots = _null_space_roots(model, pi)
    best = math.inf
    for start in _newton_starts(model, n_quasi):
        root, residual = _reduced_newton(model, pi, start, newton_tol)
        best = min(best, residual)
        if root is None:
            continue
        if all(np.abs(root - r).max() > dedup for r in roots):
            roots.append(root)
    if not roots:
        raise NoRootError(best)
    return sorted(roots, key=lambda r: tuple(r))


# --- deterministic equilibria --------------------------------------------------


def _optimality_margin_of(model, m, d):
    values, _ = _policy_iteration(model, m, d0=d)
    scores = q_ceilings(model, m, values)
    idx = np.arange(model.state_count)
    return float((scores[list(d), idx] - scores.max(axis=0)).min())


def find_deterministic_equilibria(model, tau_opt=tol.OPT,
                                  residual_tol=tol.STATIONARY_RESIDUAL,
                                  near_factor=tol.NEAR_MISS_FACTOR):
    """Each deterministic strategy, tested at the stationary points of its
    own nonlinear chain; near misses (within ``near_factor`` of both
    tolerances) are reported with ``near_miss=True``."""
    reports = []
    for d in all_strategies(model):
        pi = one_hot_strategy(model, d)
        try:
            roots = stationary_distribution(model, pi)
        except NoRootError:
            continue
        for m_bar in roots:
            br = best_response(model, m_bar, tau_opt)
            residual = float(np.abs(mixed_vector_field(model, m_bar, pi)).sum())
            margin = _optimality_margin_of(model, m_bar, d)
            ok = br.contains(d)
            is_eq = ok and residual <= residual_tol
            near = (not is_eq
                    and residual <= near_factor * residual_tol
                    and margin >= -near_factor * tau_opt)
            if not (is_eq or near):
                continue
            reports.append(EquilibriumReport(
                m=m_bar, kind="deterministic", strategy=d,
                residual=residual, optimality_ok=ok, optimality_margin=margin,
                unique_best_response=br.is_unique, is_equilibrium=is_eq,
                near_miss=near))
    return reports


# --- mixed equilibria on a two-strategy tie ------------------------------------


def _build_mixed(model, d1, d2, diff_states, lams):
    pi = np.zeros((model.state_count, model.action_count))
    pos = 0
    for i in range(model.state_count):
        if i in diff_states:
            lam = lams[pos]
            pos += 1
            pi[i, d1[i]] += lam
            pi[i, d2[i]] += 1.0 - lam
        else:
            pi[i, d1[i]] = 1.0
    return pi


def _mixed_residual(model, d1, d2, diff_states, x):
    S = model.state_count
    u = x[: S - 1]
    lams = x[S - 1:]
    m = np.append(u, 1.0 - u.sum())
    pi = _build_mixed(model, d1, d2, diff_states, lams)
    g = g_value(model, d1, d2, m)
    h = mixed_vector_field(model, m, pi)
    return np.concatenate([[g], h[: S - 1]])


def _fd_jacobian(fun, x, h=1e-7):
    base = fun(x)
    jac = np.empty((base.size, x.size))
    for k in range(x.size):
        step = np.zeros_like(x)
        step[k] = h
        jac[:, k] = (fun(x + step) - fun(x - step)) / (2 * h)
    return jac


def _gauss_newton(fun, x0, converge_tol=1e-11, max_iter=60):
    x = np.asarray(x0, dtype=np.float64).copy()
    try:
        res = fun(x)
    except (EvalError, ValueError):
        return None
    for _ in range(max_iter):
        norm = float(np.abs(res).max())
        if norm <= converge_tol:
            return x
        try:
            jac = _fd_jacobian(fun, x)
        except (EvalError, ValueError):
            return None
        step = np.linalg.lstsq(jac, -res, rcond=None)[0]
        alpha = 1.0
        while alpha >= 1.0 / 4096:
            try:
                res_new = fun(x + alpha * step)
            except (EvalError, ValueError):
                alpha *= 0.5
                continue
            if float(np.abs(res_new).max()) < (1.0 - 1e-4 * alpha) * norm:
                x = x + alpha * step
                res = res_new
                break
            alpha *= 0.5
        else:
            return None
    return None


def _verify_mixed_root(model, d1, d2, diff_states, x, tau_opt, residual_tol):
    S = model.state_count
    u = x[: S - 1]
    lams = x[S - 1:]
    if lams.min() < -1e-9 or lams.max() > 1.0 + 1e-9:
        return None
    m = np.append(u, 1.0 - u.sum())
    if m.min() < -tol.SIMPLEX_NEG:
        return None
    m = project_to_simplex(np.clip(m, 0.0, None), sum_tol=1e-3)
    lams = np.clip(lams, 0.0, 1.0)
    pi = _build_mixed(model, d1, d2, diff_states, lams)
    residual = float(np.abs(mixed_vector_field(model, m, pi)).sum())
    if residual > residual_tol:
        return None
    br = best_response(model, m, tau_opt)
    support_ok = all(
        all(a in br.optimal_actions[i] for a in np.flatnonzero(pi[i] > 1e-12))
        for i in range(S)
    )
    return m, lams, pi, residual, support_ok, br


def find_mixed_equilibria_two_strategy(model, d1, d2, tau_opt=tol.OPT,
                                       residual_tol=tol.STATIONARY_RESIDUAL,
                                       n_quasi=20, dedup=tol.ROOT_DEDUP,
                                       family_pins=11):
    """Mixed equilibria that mix d1 and d2 per state on the tie surface.

    Solves {switching function = 0, stationarity, per-differing-state
    mixing} and reports one-parameter families by sampling the first
    differing state's weight when the Jacobian at a root is rank deficient.
    """
    d1 = check_strategy(model, d1)
    d2 = check_strategy(model, d2)
    if d1 == d2:
        raise ValueError("the two strategies must differ")
    S = model.state_count
    diff_states = [i for i in range(S) if d1[i] != d2[i]]
    n_unknowns = (S - 1) + len(diff_states)

    def fun(x):
        return _mixed_residual(model, d1, d2, diff_states, x)

    starts_m = np.vstack([
        np.full((1, S), 1.0 / S),
        quasirandom_simplex(S, n_quasi),
    ])
    reports = []
    seen = []
    family_seen = []
    for m_start in starts_m:
        x0 = np.concatenate([m_start[:-1], np.full(len(diff_states), 0.5)])
        x = _gauss_newton(fun, x0)
        if x is None:
            continue
        checked = _verify_mixed_root(model, d1, d2, diff_states, x, tau_opt, residual_tol)
        if checked is None or not checked[4]:
            continue
        m, lams, pi, residual, _, br = checked
        key = np.concatenate([m, lams])
        if any(np.abs(key - s).max() <= dedup for s in seen):
            continue
        seen.append(key)

        jac = _fd_jacobian(fun, x)
        sv = np.linalg.svd(jac, compute_uv=False)
        rank = int(np.sum(sv > 1e-6 * max(sv[0], 1e-30)))
        family = None
        if rank < n_unknowns:
            # one report per family: members share the distribution
            if any(np.abs(m - fm).max() <= dedup for fm in family_seen):
                continue
            family_seen.append(m)
        if rank < n_unknowns and diff_states:
            samples = []
            for pin in np.linspace(0.0, 1.0, family_pins):
                def pinned(xr, _pin=pin):
                    full = np.concatenate([xr[: S - 1], [_pin], xr[S - 1:]])
                    return fun(full)

                x_red0 = np.concatenate([x[: S - 1], x[S:]])
                x_red = _gauss_newton(pinned, x_red0)
                if x_red is None:
                    continue
                x_full = np.concatenate([x_red[: S - 1], [pin], x_red[S - 1:]])
                checked_pin = _verify_mixed_root(
                    model, d1, d2, diff_states, x_full, tau_opt, residual_tol)
                if checked_pin is None or not checked_pin[4]:
                    continue
                m_pin, lams_pin = checked_pin[0], checked_pin[1]
                samples.append({
                    "pin": float(pin),
                    "m": [float(v) for v in m_pin],
                    "mixing": {str(diff_states[j] + 1): float(lams_pin[j])
                               for j in range(len(diff_states))},
                })
            family = FamilyReport(rank=rank, unknowns=n_unknowns, samples=samples)

        reports.append(EquilibriumReport(
            m=m, kind="mixed", mixed=pi, residual=residual,
            optimality_ok=True,
            optimality_margin=0.0,
            unique_best_response=br.is_unique,
            is_equilibrium=True, family=family))
    return reports
