"""Population dynamics: the set-valued field and its trajectory integrator.

While the best response at m is a unique strategy d (modulo actions that
are indistinguishable at m), the population follows the smooth field
f^d(m) = (Q^d(m))^T m and is integrated with an adaptive Dormand-Prince
5(4) pair.  The per-state optimality margin of the active strategy is the
event function: it crosses zero exactly where the best-response set grows,
and the switching time is located by bisection.  At a two-strategy tie the
integrator either crosses transversally or, when the surface attracts from
both sides, slides along it with the convex field combination that is
tangent to the surface (coefficient from :func:`sliding_coefficient`).

A point where the zero vector lies in the convex hull of the active
vertex fields is stationary for the inclusion, i.e. a stationary
equilibrium; the integrator detects that and returns a constant
trajectory.  When several solutions exist (a repelling tie surface) the
integrator picks one: it keeps the incoming strategy, preferring a
transversal crossing over sliding whenever the surface does not attract.
The choice is recorded in the segment metadata.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tolerances as tol
from .mdp import _policy_iteration, g_value, grad_g, q_ceilings
from .model import check_distribution, check_strategy, project_to_simplex


class IntegrationError(Exception):
    pass


# --- fields -----------------------------------------------------------------


def vector_field(model, m, d):
    """f^d(m): component j is sum_i m_i Q_{i j d(i)}(m); sums to zero."""
    d = check_strategy(model, d)
    q = model.tables.q_only(m)
    q_d = q[list(d), np.arange(model.state_count), :]
    return np.asarray(m, dtype=np.float64) @ q_d


def _field_from_tables(q, d, m):
    q_d = q[list(d), np.arange(len(m)), :]
    return m @ q_d


def mixed_vector_field(model, m, pi):
    """Field under a stationary mixed strategy."""
    q = model.tables.q_only(m)
    q_pi = np.einsum("ia,aij->ij", pi, q)
    return np.asarray(m, dtype=np.float64) @ q_pi


def population_jacobian(model, m, pi):
    """Jacobian of m -> (Q^pi(m))^T m, entry (j, k) = d f_j / d m_k.

    Uses the symbolic derivatives of the rate expressions:
    J[j, k] = Q^pi_{kj}(m) + sum_i m_i dQ^pi_{ij}/dm_k(m).
    """
    m = np.asarray(m, dtype=np.float64)
    q = model.tables.q_only(m)
    dq = model.tables.dq(m)
    q_pi = np.einsum("ia,aij->ij", pi, q)
    dq_pi = np.einsum("ia,aijk->ijk", pi, dq)
    return q_pi.T + np.einsum("i,ijk->jk", m, dq_pi)


@dataclass(frozen=True, eq=False)
class FieldPolytope:
    """Vertex fields f^d(m) for every d in the best-response set D(m)."""

    vertices: tuple     # of (strategy tuple, ndarray) pairs
    tau_opt: float

    @property
    def size(self):
        return len(self.vertices)


def field_polytope(model, m, tau_opt=tol.OPT, cap=10 ** 5):
    from .mdp import best_response

    br = best_response(model, m, tau_opt)
    if br.size > cap:
        raise IntegrationError(f"{br.size} tied strategies exceed cap {cap}")
    m = np.asarray(m, dtype=np.float64)
    q = model.tables.q_only(m)
    vertices = tuple((d, _field_from_tables(q, d, m)) for d in br.strategies())
    return FieldPolytope(vertices, tau_opt)


def sliding_coefficient(f1, f2, grad):
    """lambda in [0, 1] with <lambda f1 + (1 - lambda) f2, grad> = 0.

    Requires the two directional derivatives to have opposite strict signs
    (or one of them zero); same strict signs mean the surface is crossed
    transversally and there is nothing to slide on.
    """
    s1 = float(np.dot(f1, grad))
    s2 = float(np.dot(f2, grad))
    if s1 * s2 > 0.0:
        raise ValueError(
            f"non-attracting configuration (directional derivatives {s1}, {s2})"
        )
    if s2 == s1:
        return 0.5
    lam = s2 / (s2 - s1)
    return min(1.0, max(0.0, lam))


# --- optimality margins ------------------------------------------------------


def _equivalent_mask(q, r, i, a):
    """Actions indistinguishable from a in state i at this m (exact match of
    reward and outgoing rates); they generate identical dynamics, so ties
    among them are not strategy switches."""
    return (r[:, i] == r[a, i]) & (np.abs(q[:, i, :] - q[a, i, :]).max(axis=1) == 0.0)


def optimality_margin(model, m, d, q=None, r=None):
    """Signed optimality margin of strategy d at m.

    min over states of (score of d(i)) - (best score among actions that are
    not equivalent to d(i)); positive while d is the strictly unique best
    response, zero on a switching surface, negative past it.  Returns
    (margin, state, action) with the binding competitor.
    """
    if q is None or r is None:
        q, r = model.q_r(m)
    values, _ = _policy_iteration(model, m, d0=d)
    scores = q_ceilings(model, m, values, q, r)
    worst = math.inf
    arg = (None, None)
    for i in range(model.state_count):
        eq = _equivalent_mask(q, r, i, d[i])
        rivals = np.flatnonzero(~eq)
        if rivals.size == 0:
            continue
        j = rivals[np.argmax(scores[rivals, i])]
        gap = scores[d[i], i] - scores[j, i]
        if gap < worst:
            worst = gap
            arg = (i, int(j))
    return worst, arg[0], arg[1]


def _pair_margin(model, m, d1, d2):
    """Like optimality_margin but for the active sliding pair: gap between
    the pair's best action and the best outside action per state."""
    q, r = model.q_r(m)
    values, _ = _policy_iteration(model, m, d0=d1)
    scores = q_ceilings(model, m, values, q, r)
    worst = math.inf
    for i in range(model.state_count):
        eq = _equivalent_mask(q, r, i, d1[i]) | _equivalent_mask(q, r, i, d2[i])
        rivals = np.flatnonzero(~eq)
        if rivals.size == 0:
            continue
        own = max(scores[d1[i], i], scores[d2[i], i])
        worst = min(worst, own - scores[rivals, i].max())
    return worst


# --- mode analysis -----------------------------------------------------------


@dataclass
class _Mode:
    kind: str                  # interior | sliding | converged | branching
    strategies: tuple = ()     # (d,) or (d1, d2)
    message: str = ""


def _analyze(model, m, d_prev, tau_opt, converge_tol, extra=(), field_tol=1e-9):
    """Classify the local structure of F(m) and pick the continuation mode."""
    from .mdp import best_response

    br = best_response(model, m, tau_opt, d0=d_prev)
    strategies = list(br.strategies())
    for d in extra:
        if d not in strategies:
            strategies.append(d)
    if len(strategies) > 512:
        return _Mode("branching", (), f"{len(strategies)} simultaneously optimal strategies")
    m = np.asarray(m, dtype=np.float64)
    q = model.tables.q_only(m)
    fields = [_field_from_tables(q, d, m) for d in strategies]
    scale = max(1.0, max(float(np.abs(f).max()) for f in fields))

    clusters = []  # (representative strategy, field)
    for d, f in zip(strategies, fields):
        for idx, (dc, fc) in enumerate(clusters):
            if np.abs(f - fc).max() <= field_tol * scale:
                if d == d_prev or (dc != d_prev and d < dc):
                    clusters[idx] = (d, fc)
                break
        else:
            clusters.append((d, f))

    if len(clusters) == 1:
        d, f = clusters[0]
        if float(np.abs(f).sum()) < converge_tol:
            return _Mode("converged", (d,))
        return _Mode("interior", (d,))

    # locate the extreme pair and require every field to lie on its segment
    best_pair, best_dist = (0, 1), -1.0
    for i in range(len(clusters)):
        for j in range(i + 1, len(clusters)):
            dist = float(np.abs(clusters[i][1] - clusters[j][1]).max())
            if dist > best_dist:
                best_pair, best_dist = (i, j), dist
    ia, ib = best_pair
    da, fa = clusters[ia]
    db, fb = clusters[ib]
    span = fb - fa
    span_sq = float(span @ span)
    for idx, (dc, fc) in enumerate(clusters):
        if idx in best_pair or span_sq == 0.0:
            continue
        s = min(1.0, max(0.0, float((fc - fa) @ span) / span_sq))
        gap = float(np.abs(fc - (fa + s * span)).max())
        if gap > 10 * field_tol * scale:
            return _Mode(
                "branching",
                (),
                f"{len(clusters)} simultaneously optimal strategies with conflicting directions",
            )

    # stationary point of the inclusion: 0 in conv{fa, fb}
    s = 0.5 if span_sq == 0.0 else min(1.0, max(0.0, float(-fa @ span) / span_sq))
    if float(np.abs(fa + s * span).sum()) < converge_tol:
        return _Mode("converged", (da, db))

    # orient the pair so d1 is the incoming strategy when possible
    if d_prev is not None and db == d_prev:
        da, db = db, da
        fa, fb = fb, fa
    elif d_prev is None and db < da:
        da, db = db, da
        fa, fb = fb, fa
    grad = grad_g(model, da, db, m)
    s1 = float(fa @ grad)
    s2 = float(fb @ grad)
    if s1 >= 0.0 and s2 <= 0.0 and (s1 > 0.0 or s2 < 0.0):
        return _Mode("sliding", (da, db))
    if s1 > 0.0 and s2 > 0.0:
        return _Mode("interior", (db,))
    # both non-positive, or a repelling surface: keep the incoming strategy
    return _Mode("interior", (da,))


# --- Dormand-Prince 5(4) ------------------------------------------------------

_DP_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
)
_DP_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_DP_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640,
                   -92097 / 339200, 187 / 2100, 1 / 40])
_DP_E = _DP_B5 - _DP_B4

_MIN_FACTOR = 0.2
_MAX_FACTOR = 10.0
_SAFETY = 0.9


class _StepFailure(Exception):
    pass


def _dp_step(field, y, h, k1):
    k = np.empty((7, y.shape[0]))
    k[0] = k1
    for s in range(1, 6):
        coeffs = _DP_A[s]
        ys = y + h * np.tensordot(coeffs, k[: len(coeffs)], axes=1)
        k[s] = field(ys)
    y_new = y + h * np.tensordot(_DP_B5[:6], k[:6], axes=1)
    k[6] = field(y_new)
    err = h * (_DP_E @ k)
    return y_new, err, k[6]


def _initial_step(y, f, rtol, atol):
    scale = atol + rtol * np.abs(y)
    d0 = float(np.sqrt(np.mean((y / scale) ** 2)))
    d1 = float(np.sqrt(np.mean((f / scale) ** 2)))
    if d0 < 1e-5 or d1 < 1e-5:
        return 1e-6
    return 0.01 * d0 / d1


class _Stepper:
    """Adaptive DP45 driver for one smooth field, stepping never past a
    given stop time; each accepted state is projected to the simplex."""

    def __init__(self, field, t, y, rtol, atol):
        self.field = field
        self.t = t
        self.y = y
        self.f = field(y)
        self.rtol = rtol
        self.atol = atol
        self.h = _initial_step(y, self.f, rtol, atol)

    def step_to(self, t_stop):
        """One accepted step ending at or before t_stop (landing on t_stop
        exactly when the step is clipped); returns the pre-step (t, y) for
        event bracketing."""
        t_prev, y_prev = self.t, self.y
        while True:
            remaining = t_stop - self.t
            h = min(self.h, remaining)
            if h <= 1e-14 * max(1.0, abs(self.t)):
                raise _StepFailure(f"step size underflow at t = {self.t}")
            y_new, err, f_new = _dp_step(self.field, self.y, h, self.f)
            scale = self.atol + self.rtol * np.maximum(np.abs(self.y), np.abs(y_new))
            norm = float(np.sqrt(np.mean((err / scale) ** 2)))
            if norm <= 1.0:
                factor = _MAX_FACTOR if norm == 0.0 else min(
                    _MAX_FACTOR, max(_MIN_FACTOR, _SAFETY * norm ** -0.2))
                if h == self.h:
                    self.h = h * factor
                self.t = t_stop if h == remaining else self.t + h
                y_proj = project_to_simplex(y_new)
                self.y = y_proj
                self.f = f_new if y_proj is y_new else self.field(y_proj)
                return t_prev, y_prev
            self.h = h * max(_MIN_FACTOR, _SAFETY * norm ** -0.2)


def _flow_to(field, t0, y0, t1, rtol, atol):
    """Plain integration of a smooth field from (t0, y0) to t1."""
    if t1 <= t0:
        return y0
    stepper = _Stepper(field, t0, y0, rtol, atol)
    while stepper.t < t1 - 1e-15 * max(1.0, t1):
        stepper.step_to(t1)
    return stepper.y


def _bisect_event(field, event, t_lo, y_lo, t_hi, rtol, atol, time_tol):
    """Bisection for the first event time in (t_lo, t_hi].

    ``event(y) >= 0`` holds at y_lo; the event has fired by t_hi.  Returns
    (t, y) on the non-negative side within ``time_tol`` of the crossing.
    """
    while t_hi - t_lo > time_tol:
        t_mid = 0.5 * (t_lo + t_hi)
        y_mid = _flow_to(field, t_lo, y_lo, t_mid, rtol, atol)
        if event(y_mid) >= 0.0:
            t_lo, y_lo = t_mid, y_mid
        else:
            t_hi = t_mid
    return t_lo, y_lo


# --- trajectory --------------------------------------------------------------


@dataclass
class Segment:
    t_start: float
    t_end: float
    mode: str            # interior | sliding
    strategies: tuple    # (d,) or (d1, d2)
    end_reason: str = ""


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    modes: list
    strategies: list      # per sample: (d,) or (d1, d2)
    lambdas: np.ndarray   # mixing coefficient, nan outside sliding
    segments: list
    termination: str      # horizon | converged | step-failure | unresolved-branching
    message: str = ""

    def state_at(self, t, time_tol=1e-9):
        """State at a recorded time (or linear interpolation between
        neighbouring samples)."""
        idx = int(np.searchsorted(self.times, t))
        for j in (idx - 1, idx, idx + 1):
            if 0 <= j < len(self.times) and abs(self.times[j] - t) <= time_tol:
                return self.states[j]
        if idx == 0:
            return self.states[0]
        if idx >= len(self.times):
            return self.states[-1]
        t0, t1 = self.times[idx - 1], self.times[idx]
        w = 0.0 if t1 == t0 else (t - t0) / (t1 - t0)
        return (1 - w) * self.states[idx - 1] + w * self.states[idx]

    @property
    def terminal_state(self):
        return self.states[-1]

    @property
    def terminal_mode(self):
        return self.modes[-1]

    def write_csv(self, path, model):
        path = str(path)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(csv_header(model) + "\n")
            for row in csv_rows(self, model):
                fh.write(row + "\n")


def csv_header(model):
    cols = ["t"] + [f"m{i + 1}" for i in range(model.state_count)]
    return ",".join(cols + ["mode", "strategy", "lambda"])


def _strategy_text(model, strategies):
    parts = ["|".join(model.actions[a] for a in d) for d in strategies]
    return "~".join(parts)


def csv_rows(trajectory, model):
    for i in range(len(trajectory.times)):
        lam = trajectory.lambdas[i]
        row = [repr(float(trajectory.times[i]))]
        row += [repr(float(x)) for x in trajectory.states[i]]
        row.append(trajectory.modes[i])
        row.append(_strategy_text(model, trajectory.strategies[i]))
        row.append("" if math.isnan(lam) else repr(float(lam)))
        yield ",".join(row)


class _Recorder:
    def __init__(self):
        self.times = []
        self.states = []
        self.modes = []
        self.strategies = []
        self.lambdas = []

    def point(self, t, y, mode, strategies, lam=math.nan):
        if self.times and t <= self.times[-1] + 1e-15:
            # same instant: keep one row, newest metadata wins
            self.states[-1] = np.array(y)
            self.modes[-1] = mode
            self.strategies[-1] = strategies
            self.lambdas[-1] = lam
            return
        self.times.append(t)
        self.states.append(np.array(y))
        self.modes.append(mode)
        self.strategies.append(strategies)
        self.lambdas.append(lam)

    def finish(self, segments, termination, message=""):
        return Trajectory(
            np.array(self.times),
            np.array(self.states),
            self.modes,
            self.strategies,
            np.array(self.lambdas),
            segments,
            termination,
            message,
        )


# --- the integrator -----------------------------------------------------------


def integrate(model, m0, horizon=100.0, *, tau_opt=tol.OPT, rtol=tol.RK_RTOL,
              atol=tol.RK_ATOL, sample_times=(), converge_tol=tol.CONVERGED_FIELD,
              event_time_tol=tol.EVENT_TIME, fd_step=1e-5,
              max_events=200, max_steps=500_000):
    """Integrate the best-response population dynamics from m0.

    Returns a :class:`Trajectory`; failures are reported in its
    ``termination``/``message`` fields rather than raised, with samples up
    to the failure time retained.  ``sample_times`` are landed on exactly.
    """
    if horizon <= 0:
        raise IntegrationError(f"horizon must be positive, got {horizon}")
    y = project_to_simplex(check_distribution(m0, model.state_count))
    boundaries = sorted({float(t) for t in sample_times if 0.0 < t <= horizon} | {float(horizon)})

    rec = _Recorder()
    segments = []
    t = 0.0
    steps = 0
    events = 0
    mode = _analyze(model, y, None, tau_opt, converge_tol)

    def record_tail(t_now, y_now, strategies):
        for tb in boundaries:
            if tb > t_now + 1e-15:
                rec.point(tb, y_now, "converged", strategies)

    while True:
        if mode.kind == "converged":
            rec.point(t, y, "converged", mode.strategies)
            record_tail(t, y, mode.strategies)
            return rec.finish(segments, "converged", mode.message)
        if mode.kind == "branching":
            rec.point(t, y, "interior", mode.strategies or ((),))
            return rec.finish(segments, "unresolved-branching", mode.message)
        if t >= horizon - 1e-15 * max(1.0, horizon):
            return rec.finish(segments, "horizon")

        seg_start = t
        if mode.kind == "interior":
            d = mode.strategies[0]
            q0 = model.tables.q_only(y)
            f0 = _field_from_tables(q0, d, np.asarray(y))
            if float(np.abs(f0).sum()) < converge_tol:
                mode = _Mode("converged", (d,))
                continue
            rec.point(t, y, "interior", (d,))
            field = lambda yy, _d=d: _field_from_tables(model.tables.q_only(yy), _d, yy)

            def margin_of(yy, _d=d):
                return optimality_margin(model, yy, _d)[0]

            outcome = None
            polish_gate = math.inf
            try:
                stepper = _Stepper(field, t, y, rtol, atol)
                while True:
                    bidx = int(np.searchsorted(boundaries, stepper.t, side="right"))
                    t_stop = boundaries[bidx] if bidx < len(boundaries) else horizon
                    t_prev, y_prev = stepper.step_to(t_stop)
                    steps += 1
                    if steps > max_steps:
                        raise _StepFailure(f"exceeded {max_steps} steps")
                    t, y = stepper.t, stepper.y
                    margin, mi, ma = optimality_margin(model, y, d)
                    if margin < 0.0:
                        cand = d[:mi] + (ma,) + d[mi + 1:]
                        t, y = _bisect_event(field, margin_of, t_prev, y_prev,
                                             t, rtol, atol, event_time_tol)
                        rec.point(t, y, "interior", (d,))
                        residual, _, _ = optimality_margin(model, y, d)
                        tau_eff = min(1e-6, max(tau_opt, 4.0 * abs(residual)))
                        outcome = ("event", tau_eff, (cand,))
                        break
                    rec.point(t, y, "interior", (d,))
                    fnorm = float(np.abs(stepper.f).sum())
                    if fnorm < converge_tol:
                        outcome = ("converged",)
                        break
                    if fnorm < 1e-6 and fnorm < 0.5 * polish_gate:
                        rest = _polish_interior_rest(model, y, d, converge_tol)
                        if rest is not None:
                            y = rest
                            stepper.y = rest
                            rec.point(t, y, "interior", (d,))
                            outcome = ("converged",)
                            break
                        polish_gate = fnorm
                    if t >= horizon - 1e-15 * max(1.0, horizon):
                        outcome = ("horizon",)
                        break
            except _StepFailure as exc:
                segments.append(Segment(seg_start, t, "interior", (d,), "step-failure"))
                rec.point(t, y, "interior", (d,))
                return rec.finish(segments, "step-failure", str(exc))

            if outcome[0] == "horizon":
                segments.append(Segment(seg_start, t, "interior", (d,), "horizon"))
                return rec.finish(segments, "horizon")
            if outcome[0] == "converged":
                segments.append(Segment(seg_start, t, "interior", (d,), "converged"))
                mode = _Mode("converged", (d,))
                continue
            segments.append(Segment(seg_start, t, "interior", (d,), "switch"))
            events += 1
            if events > max_events:
                return rec.finish(segments, "step-failure",
                                  f"more than {max_events} strategy switches")
            mode = _analyze(model, y, d, outcome[1], converge_tol, extra=outcome[2])
            continue

        # sliding segment
        d1, d2 = mode.strategies
        rec.point(t, y, "sliding", (d1, d2), _sliding_lambda(model, y, d1, d2, fd_step))

        def slide_field(yy, _d1=d1, _d2=d2):
            q = model.tables.q_only(yy)
            f1 = _field_from_tables(q, _d1, yy)
            f2 = _field_from_tables(q, _d2, yy)
            grad = grad_g(model, _d1, _d2, yy, fd_step)
            s1 = float(f1 @ grad)
            s2 = float(f2 @ grad)
            lam = 0.5 if s2 == s1 else min(1.0, max(0.0, s2 / (s2 - s1)))
            return lam * f1 + (1.0 - lam) * f2

        outcome = None
        try:
            stepper = _Stepper(slide_field, t, y, rtol, atol)
            while True:
                bidx = int(np.searchsorted(boundaries, stepper.t, side="right"))
                t_stop = boundaries[bidx] if bidx < len(boundaries) else horizon
                t_prev, y_prev = stepper.step_to(t_stop)
                steps += 1
                if steps > max_steps:
                    raise _StepFailure(f"exceeded {max_steps} steps")
                corrected = _surface_correct(model, stepper.y, d1, d2, fd_step)
                stepper.y = corrected
                stepper.f = slide_field(corrected)
                t, y = stepper.t, stepper.y
                lam_raw = _sliding_lambda(model, y, d1, d2, fd_step)
                pair_gap = _pair_margin(model, y, d1, d2)
                if lam_raw < -1e-9 or lam_raw > 1.0 + 1e-9 or pair_gap < 0.0:
                    def still_sliding(yy, _d1=d1, _d2=d2):
                        lam = _sliding_lambda(model, yy, _d1, _d2, fd_step)
                        gap = _pair_margin(model, yy, _d1, _d2)
                        return min(lam, 1.0 - lam, gap)

                    t, y = _bisect_event(slide_field, still_sliding, t_prev, y_prev,
                                         t, rtol, atol, event_time_tol)
                    y = _surface_correct(model, y, d1, d2, fd_step)
                    lam_here = _sliding_lambda(model, y, d1, d2, fd_step)
                    rec.point(t, y, "sliding", (d1, d2), lam_here)
                    if _pair_margin(model, y, d1, d2) < -tau_opt:
                        outcome = ("reanalyze", (d1, d2))
                    elif lam_raw > 1.0:
                        outcome = ("exit", d1)
                    else:
                        outcome = ("exit", d2)
                    break
                rec.point(t, y, "sliding", (d1, d2), lam_raw)
                min_field = _segment_min_field(model, y, d1, d2)
                if min_field < 1e-8:
                    polished = _polish_sliding_rest(model, y, d1, d2)
                    if polished is not None:
                        y_rest, lam_rest = polished
                        if _segment_min_field(model, y_rest, d1, d2) < converge_tol:
                            y = y_rest
                            stepper.y = y_rest
                            rec.point(t, y, "sliding", (d1, d2), lam_rest)
                            outcome = ("converged",)
                            break
                if min_field < converge_tol:
                    outcome = ("converged",)
                    break
                if t >= horizon - 1e-15 * max(1.0, horizon):
                    outcome = ("horizon",)
                    break
        except _StepFailure as exc:
            segments.append(Segment(seg_start, t, "sliding", (d1, d2), "step-failure"))
            return rec.finish(segments, "step-failure", str(exc))

        if outcome[0] == "horizon":
            segments.append(Segment(seg_start, t, "sliding", (d1, d2), "horizon"))
            return rec.finish(segments, "horizon")
        if outcome[0] == "converged":
            segments.append(Segment(seg_start, t, "sliding", (d1, d2), "converged"))
            mode = _Mode("converged", (d1, d2))
            continue
        segments.append(Segment(seg_start, t, "sliding", (d1, d2), "switch"))
        events += 1
        if events > max_events:
            return rec.finish(segments, "step-failure",
                              f"more than {max_events} strategy switches")
        if outcome[0] == "exit":
            mode = _Mode("interior", (outcome[1],))
        else:
            mode = _analyze(model, y, d1, tau_opt, converge_tol, extra=(d1, d2))
        continue


def _sliding_lambda(model, m, d1, d2, fd_step):
    q = model.tables.q_only(m)
    f1 = _field_from_tables(q, d1, np.asarray(m))
    f2 = _field_from_tables(q, d2, np.asarray(m))
    grad = grad_g(model, d1, d2, m, fd_step)
    s1 = float(f1 @ grad)
    s2 = float(f2 @ grad)
    if s2 == s1:
        return 0.5
    return s2 / (s2 - s1)


def _segment_min_field(model, m, d1, d2):
    """min over lambda in [0, 1] of ||lambda f1 + (1 - lambda) f2||_1: zero
    iff the point is stationary for the inclusion restricted to the pair."""
    m = np.asarray(m, dtype=np.float64)
    q = model.tables.q_only(m)
    f1 = _field_from_tables(q, d1, m)
    f2 = _field_from_tables(q, d2, m)
    span = f1 - f2
    span_sq = float(span @ span)
    lam = 0.5 if span_sq == 0.0 else min(1.0, max(0.0, float(-f2 @ span) / span_sq))
    return float(np.abs(lam * f1 + (1.0 - lam) * f2).sum())


def _polish_interior_rest(model, m, d, converge_tol, max_iter=10):
    """Newton-refine a nearby rest point of f^d and accept it only when it
    attracts (no eigenvalue of the linearization with positive real part):
    the adaptive stepper cannot push the state below its error floor, but a
    genuine stationary point nearby can be certified exactly."""
    S = model.state_count
    pi = np.zeros((S, model.action_count))
    pi[np.arange(S), list(d)] = 1.0
    u = np.asarray(m, dtype=np.float64)[:-1].copy()
    try:
        for _ in range(max_iter):
            mm = np.append(u, 1.0 - u.sum())
            q = model.tables.q_only(mm)
            f = _field_from_tables(q, d, mm)
            if float(np.abs(f).sum()) <= 0.1 * converge_tol:
                break
            jac = population_jacobian(model, mm, pi)
            jac_red = jac[: S - 1, : S - 1] - jac[: S - 1, S - 1:S]
            try:
                step = np.linalg.solve(jac_red, -f[: S - 1])
            except np.linalg.LinAlgError:
                step = np.linalg.lstsq(jac_red, -f[: S - 1], rcond=None)[0]
            u = u + step
        else:
            return None
    except Exception:  # noqa: BLE001 - polishing is best effort
        return None
    mm = np.append(u, 1.0 - u.sum())
    if mm.min() < -tol.SIMPLEX_NEG or np.abs(mm - m).max() > 1e-6:
        return None
    eigs = np.linalg.eigvals(population_jacobian(model, mm, pi))
    if np.any(eigs.real > tol.ZERO_EIG):
        return None
    return project_to_simplex(np.clip(mm, 0.0, None), sum_tol=1e-3)


def _polish_sliding_rest(model, m, d1, d2, fd=1e-7, res_tol=1e-12, max_iter=12):
    """Newton-refine a nearby rest point of the sliding motion: g(m) = 0 and
    lambda f1(m) + (1 - lambda) f2(m) = 0.  Returns (m, lambda) or None."""
    S = model.state_count
    m = np.asarray(m, dtype=np.float64)

    def resid(x):
        u, lam = x[: S - 1], x[S - 1]
        mm = np.append(u, 1.0 - u.sum())
        q = model.tables.q_only(mm)
        f1 = _field_from_tables(q, d1, mm)
        f2 = _field_from_tables(q, d2, mm)
        f = lam * f1 + (1.0 - lam) * f2
        return np.concatenate([[g_value(model, d1, d2, mm)], f[: S - 1]])

    x = np.concatenate([m[:-1], [0.5]])
    try:
        res = resid(x)
        for _ in range(max_iter):
            if np.abs(res).max() <= res_tol:
                break
            jac = np.empty((S, S))
            for k in range(S):
                step = np.zeros(S)
                step[k] = fd
                jac[:, k] = (resid(x + step) - resid(x - step)) / (2 * fd)
            x = x + np.linalg.lstsq(jac, -res, rcond=None)[0]
            res = resid(x)
        else:
            return None
    except Exception:  # noqa: BLE001 - polishing is best effort
        return None
    lam = float(x[S - 1])
    mm = np.append(x[: S - 1], 1.0 - x[: S - 1].sum())
    if not -1e-9 <= lam <= 1.0 + 1e-9 or mm.min() < -tol.SIMPLEX_NEG:
        return None
    if np.abs(mm - m).max() > 1e-6:
        return None
    return project_to_simplex(np.clip(mm, 0.0, None), sum_tol=1e-3), min(1.0, max(0.0, lam))


def _surface_correct(model, m, d1, d2, fd_step, g_tol=1e-13):
    """Newton-project m back onto {g = 0} inside the sum-one hyperplane."""
    y = np.asarray(m, dtype=np.float64)
    for _ in range(2):
        g = g_value(model, d1, d2, y)
        if abs(g) < g_tol:
            break
        grad = grad_g(model, d1, d2, y, fd_step)
        w = grad - grad.mean()
        denom = float(grad @ w)
        if abs(denom) < 1e-14:
            break
        y = y - (g / denom) * w
    return project_to_simplex(y)
