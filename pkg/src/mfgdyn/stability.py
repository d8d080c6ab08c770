"""Mechanical convergence checkers.

Local: around a deterministic equilibrium with a unique best response, the
linearization of m -> (Q^d(m))^T m always has a zero eigenvalue (the field
is tangent to the simplex); local exponential convergence holds when that
zero eigenvalue belongs to the equilibrium direction and every other
eigenvalue has strictly negative real part.  For rate matrices constant in
m an explicit admission radius ``delta`` is computed from the generalized
eigenspaces of the transposed generator.

Global (two strategies): on the switching surface {g = 0}, the signs of
the directional derivatives of g along the two vertex fields decide the
case: both fields crossing toward one side, or both pointing at the
surface (sliding).  The checker samples the surface and classifies.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.optimize import brentq

from . import tolerances as tol
from .dynamics import integrate, population_jacobian, vector_field
from .mdp import best_response, g_value, grad_g
from .model import check_strategy, one_hot_strategy, quasirandom_simplex

__all__ = [
    "StabilityError", "NotConstantError", "NotIrreducibleError",
    "SurfaceNotFoundError", "StabilityReport", "GlobalCheckReport",
    "SurfaceSample", "g_value", "grad_g", "jacobian_f", "local_check",
    "explicit_delta", "global_check",
]


class StabilityError(Exception):
    pass


class NotConstantError(StabilityError):
    pass


class NotIrreducibleError(StabilityError):
    pass


class SurfaceNotFoundError(StabilityError):
    pass


def jacobian_f(model, d, m):
    """Jacobian of the strategy-d population field at m (symbolic rates)."""
    d = check_strategy(model, d)
    return population_jacobian(model, m, one_hot_strategy(model, d))


# --- local convergence ---------------------------------------------------------


@dataclass(eq=False)
class StabilityReport:
    equilibrium: object
    unique: bool
    eps_radius: float
    eigenvalues: np.ndarray
    zero_eigenvalue_angle: float
    classification: str      # locally-convergent | inconclusive | fails-uniqueness
    empirical_ok: bool
    delta: float = None
    message: str = ""

    def to_dict(self, model):
        return {
            "equilibrium": self.equilibrium.to_dict(model),
            "unique_best_response": bool(self.unique),
            "eps_radius": float(self.eps_radius),
            "eigenvalues": [[float(ev.real), float(ev.imag)] for ev in self.eigenvalues],
            "zero_eigenvalue_angle": (None if self.zero_eigenvalue_angle is None
                                      else float(self.zero_eigenvalue_angle)),
            "classification": self.classification,
            "empirical_ok": bool(self.empirical_ok),
            "delta": None if self.delta is None else float(self.delta),
            "message": self.message,
        }


def _tangent_directions(rng, state_count, n):
    dirs = rng.standard_normal((n, state_count))
    dirs -= dirs.mean(axis=1, keepdims=True)
    norms = np.linalg.norm(dirs, axis=1)
    keep = norms > 1e-8
    return dirs[keep] / norms[keep, None]


def _unique_ball_radius(model, m_bar, d, dirs, eps_max, tau_opt):
    """Largest radius <= eps_max with D(m') = {d} at the sampled directions
    (bisection; directions leaving the simplex are skipped)."""

    def holds(radius):
        any_valid = False
        for u in dirs:
            point = m_bar + radius * u
            if point.min() < 0.0:
                continue
            any_valid = True
            br = best_response(model, point, tau_opt)
            if not br.is_unique or br.unique_strategy() != d:
                return False
        return any_valid

    if holds(eps_max):
        return eps_max
    lo, hi = 0.0, eps_max
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:
            break
        if holds(mid):
            lo = mid
        else:
            hi = mid
    return lo


def local_check(model, report, eps_max=0.2, n_dirs=100, n_starts=10,
                empirical_horizon=50.0, seed=0, tau_opt=tol.OPT,
                final_tol=1e-4):
    """Classify local convergence to a deterministic equilibrium.

    Checks best-response uniqueness at the equilibrium, measures the radius
    on which the strategy stays uniquely optimal, classifies the Jacobian
    eigenstructure, and confirms empirically by integrating from random
    starts inside the certified ball.
    """
    if report.kind != "deterministic":
        raise StabilityError("local_check needs a deterministic equilibrium")
    d = check_strategy(model, report.strategy)
    m_bar = np.asarray(report.m, dtype=np.float64)
    rng = np.random.default_rng(seed)

    br = best_response(model, m_bar, tau_opt)
    unique = br.is_unique and br.unique_strategy() == d
    if not unique:
        return StabilityReport(
            equilibrium=report, unique=False, eps_radius=0.0,
            eigenvalues=np.linalg.eigvals(jacobian_f(model, d, m_bar)),
            zero_eigenvalue_angle=None, classification="fails-uniqueness",
            empirical_ok=False,
            message=f"{br.size} optimal strategies at the equilibrium")

    dirs = _tangent_directions(rng, model.state_count, n_dirs)
    eps_radius = _unique_ball_radius(model, m_bar, d, dirs, eps_max, tau_opt)

    jac = jacobian_f(model, d, m_bar)
    try:
        eigvals, eigvecs = np.linalg.eig(jac)
    except np.linalg.LinAlgError as exc:
        return StabilityReport(
            equilibrium=report, unique=True, eps_radius=eps_radius,
            eigenvalues=np.empty(0), zero_eigenvalue_angle=None,
            classification="inconclusive", empirical_ok=False,
            message=f"eigen-solver failure: {exc}")

    near_zero = np.flatnonzero(np.abs(eigvals.real) <= tol.ZERO_EIG)
    angle = None
    classification = "inconclusive"
    message = ""
    if near_zero.size != 1:
        message = f"{near_zero.size} eigenvalues with |Re| <= {tol.ZERO_EIG}"
    else:
        vec = eigvecs[:, near_zero[0]]
        cosine = abs(np.vdot(vec, m_bar)) / (np.linalg.norm(vec) * np.linalg.norm(m_bar))
        angle = float(math.acos(min(1.0, cosine)))
        others = np.delete(eigvals, near_zero[0])
        if angle <= tol.ALIGN_ANGLE and np.all(others.real <= -tol.ZERO_EIG):
            classification = "locally-convergent"
        elif angle > tol.ALIGN_ANGLE:
            message = f"zero eigenvector misaligned with the equilibrium (angle {angle:.2e})"
        else:
            message = "eigenvalue with nonnegative real part"

    empirical_ok = _empirical_convergence(
        model, m_bar, rng, eps_radius / 4.0, n_starts,
        empirical_horizon, final_tol, tau_opt)

    return StabilityReport(
        equilibrium=report, unique=True, eps_radius=eps_radius,
        eigenvalues=eigvals, zero_eigenvalue_angle=angle,
        classification=classification, empirical_ok=empirical_ok,
        message=message)


def _empirical_convergence(model, m_bar, rng, radius, n_starts, horizon,
                           final_tol, tau_opt):
    if radius <= 0.0:
        return False
    starts = []
    guard = 0
    while len(starts) < n_starts and guard < 100 * n_starts:
        guard += 1
        u = _tangent_directions(rng, model.state_count, 1)
        if u.shape[0] == 0:
            continue
        point = m_bar + radius * u[0]
        if point.min() >= 0.0:
            starts.append(point)
    if len(starts) < n_starts:
        return False
    for start in starts:
        traj = integrate(model, start, horizon=horizon, tau_opt=tau_opt)
        if traj.termination not in ("horizon", "converged"):
            return False
        dists = np.linalg.norm(traj.states - m_bar, axis=1)
        if np.linalg.norm(traj.terminal_state - m_bar) > final_tol:
            return False
        # envelope decay: unit-interval maxima must not grow
        buckets = np.floor(traj.times).astype(int)
        env = {}
        for b, dist in zip(buckets, dists):
            env[b] = max(env.get(b, 0.0), dist)
        keys = sorted(env)
        for prev, cur in zip(keys, keys[1:]):
            if env[cur] > max(1.05 * env[prev], 1e-12):
                return False
    return True


# --- explicit admission radius (constant rates) ---------------------------------


def _constant_generator(model, d, constancy_tol):
    probes = np.vstack([
        np.eye(model.state_count),
        np.full((1, model.state_count), 1.0 / model.state_count),
        quasirandom_simplex(model.state_count, 3),
    ])
    idx = np.arange(model.state_count)
    tables = [model.tables.q_only(p)[list(d), idx, :] for p in probes]
    base = tables[0]
    spread = max(float(np.abs(t - base).max()) for t in tables)
    if spread > constancy_tol:
        raise NotConstantError(
            f"rates vary by {spread:.3e} across sampled distributions")
    return base


def explicit_delta(model, report, eps_radius, constancy_tol=tol.CONSTANT_Q,
                   cluster_tol=1e-6):
    """Constructive convergence radius for a constant-rate equilibrium.

    Builds the generalized eigenspaces of the transposed generator, the
    per-vector transient-growth constants

        C = sum_l e^{-l} l^l / (l! (-Re lambda)^l) ||(A - lambda I)^l v||,

    and returns (eps_radius / 2) * min ||v|| / max C over the decaying
    eigenspaces (basis vectors normalized to unit length; the worst
    transient growth governs the admissible radius).  Requires the zero
    eigenvalue to be simple (irreducible chain).
    """
    if report.kind != "deterministic":
        raise StabilityError("explicit_delta needs a deterministic equilibrium")
    d = check_strategy(model, report.strategy)
    q_d = _constant_generator(model, d, constancy_tol)
    a = q_d.T.astype(complex)

    t_schur, _ = scipy.linalg.schur(a, output="complex")
    eigvals = np.diag(t_schur)
    scale = max(1.0, float(np.abs(eigvals).max()))
    zero_like = np.abs(eigvals) <= tol.ZERO_EIG * scale
    if int(zero_like.sum()) != 1:
        raise NotIrreducibleError(
            f"zero eigenvalue multiplicity {int(zero_like.sum())} (need 1)")

    remaining = sorted(eigvals[~zero_like], key=lambda z: (z.real, z.imag))
    clusters = []
    for ev in remaining:
        if clusters and abs(ev - clusters[-1][0]) <= cluster_tol * scale:
            lam, mult = clusters[-1]
            clusters[-1] = ((lam * mult + ev) / (mult + 1), mult + 1)
        else:
            clusters.append((ev, 1))

    max_c = 0.0
    min_v = math.inf
    for lam, mult in clusters:
        if lam.real >= -tol.ZERO_EIG * scale:
            raise NotIrreducibleError(
                f"eigenvalue {lam} has nonnegative real part")
        shifted = a - lam * np.eye(a.shape[0])
        power = np.linalg.matrix_power(shifted, mult)
        basis = scipy.linalg.null_space(power, rcond=1e-9)
        if basis.shape[1] == 0:
            raise StabilityError(f"empty generalized eigenspace for {lam}")
        for col in basis.T:
            v = col / np.linalg.norm(col)
            min_v = min(min_v, float(np.linalg.norm(v)))
            c = 0.0
            w = v.copy()
            for level in range(mult):
                if level == 0:
                    coef = 1.0
                else:
                    coef = (math.exp(-level) * level ** level
                            / (math.factorial(level) * (-lam.real) ** level))
                c += coef * float(np.linalg.norm(w))
                w = shifted @ w
            max_c = max(max_c, c)
    return (eps_radius / 2.0) * min_v / max_c


# --- global two-strategy check ---------------------------------------------------


@dataclass(eq=False)
class SurfaceSample:
    m: np.ndarray
    s1: float        # <f^{d1}, normalized grad g>
    s2: float        # <f^{d2}, normalized grad (-g)>
    grad_norm: float
    near_kink: bool

    def to_dict(self):
        return {
            "m": [float(x) for x in self.m],
            "s1": float(self.s1),
            "s2": float(self.s2),
            "grad_norm": float(self.grad_norm),
            "near_kink": bool(self.near_kink),
        }


@dataclass(eq=False)
class GlobalCheckReport:
    case: str                # "i" | "ii" | "iii" | "mixed/none"
    samples: list
    violations: list         # sample indices breaking the tested conditions
    chords_tried: int
    message: str = ""

    def to_dict(self):
        return {
            "case": self.case,
            "n_samples": len(self.samples),
            "chords_tried": self.chords_tried,
            "violations": self.violations,
            "samples": [s.to_dict() for s in self.samples],
            "message": self.message,
        }


def _surface_points(model, d1, d2, n_samples, rng, budget_factor=10):
    points = []
    tried = 0
    budget = budget_factor * n_samples
    alpha = np.ones(model.state_count)
    while len(points) < n_samples and tried < budget:
        tried += 1
        a = rng.dirichlet(alpha)
        b = rng.dirichlet(alpha)
        ga = g_value(model, d1, d2, a)
        gb = g_value(model, d1, d2, b)
        if ga == 0.0:
            points.append(a)
            continue
        if ga * gb >= 0.0:
            continue
        func = lambda s: g_value(model, d1, d2, (1 - s) * a + s * b)
        s_root = brentq(func, 0.0, 1.0, xtol=1e-14, rtol=8.9e-16)
        points.append((1 - s_root) * a + s_root * b)
    return points, tried


def global_check(model, d1, d2, n_samples=200, seed=0, fd_step=tol.FD_STEP,
                 slack=tol.WEAK_SIGN_SLACK, grad_min=tol.GRAD_MIN_NORM):
    """Sample the switching surface {g = 0} and classify the sign pattern of
    the two directional derivatives.

    The gradient is normalized to unit max-norm (sign preserving), so the
    reported inner products are scale-free.  Samples within twice the
    smoothing width of a slog joint are flagged: g is only C1 there.
    """
    d1 = check_strategy(model, d1)
    d2 = check_strategy(model, d2)
    if d1 == d2:
        raise ValueError("the two strategies must differ")
    rng = np.random.default_rng(seed)
    points, tried = _surface_points(model, d1, d2, n_samples, rng)
    if not points:
        raise SurfaceNotFoundError(
            f"surface not found: g has constant sign on {tried} sampled chords")

    samples = []
    violations = []
    degenerate = []
    for idx, m in enumerate(points):
        grad = grad_g(model, d1, d2, m, fd_step)
        grad_norm = float(np.linalg.norm(grad))
        scale = float(np.abs(grad).max())
        unit = grad / scale if scale > 0 else grad
        f1 = vector_field(model, m, d1)
        f2 = vector_field(model, m, d2)
        s1 = float(f1 @ unit)
        s2 = float(f2 @ (-unit))
        kinks = model.tables.slog_kink_distances(m)
        samples.append(SurfaceSample(
            m=np.asarray(m), s1=s1, s2=s2, grad_norm=grad_norm,
            near_kink=bool(kinks.size and (kinks <= 2.0).any())))
        if grad_norm <= grad_min:
            degenerate.append(idx)

    s1s = np.array([s.s1 for s in samples])
    s2s = np.array([s.s2 for s in samples])
    if degenerate:
        case = "mixed/none"
        violations = degenerate
        message = "degenerate gradient at sampled surface points"
    elif np.all(s1s > 0.0) and np.all(s2s < 0.0):
        case, message = "i", "flow crosses the surface toward the g > 0 side"
    elif np.all(s1s < 0.0) and np.all(s2s > 0.0):
        case, message = "ii", "flow crosses the surface toward the g < 0 side"
    elif np.all(s1s >= -slack) and np.all(s2s >= -slack):
        case, message = "iii", "both fields point at the surface (sliding)"
    else:
        case = "mixed/none"
        violations = [int(i) for i in
                      np.flatnonzero((s1s < -slack) | (s2s < -slack))]
        message = "sign pattern matches none of the three cases"
    return GlobalCheckReport(case, samples, violations, tried, message)
