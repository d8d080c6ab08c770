"""Game model container, simplex utilities, validation, and model files.

A model is S states, A actions, a discount in (0, 1), and per-action
transition-rate / reward tables whose entries are expressions over the
population distribution (see :mod:`mfgdyn.expr`).  Rate matrices must be
conservative generators at every point of the simplex: nonnegative
off-diagonal entries, zero row sums.
"""

from __future__ import annotations

import itertools
import json
import math
import re
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.stats import qmc

from . import tolerances as tol
from .expr import Expr, Num, ParseError, parse_expr, to_text
from .tape import ModelTables


class ModelError(Exception):
    """Malformed model description."""


_PARAM_NAME_RE = re.compile(r"^[A-Za-z_][A-Za-z_0-9]*$")
_VARLIKE_RE = re.compile(r"^m[0-9]+$")

_RESERVED = {"exp", "ln", "sqrt", "min", "max", "slog", "dslog", "sellte"}


@dataclass(frozen=True, eq=False)
class GameModel:
    """Immutable finite-state, finite-action game description.

    ``q[a][i][j]`` is the rate expression for i -> j under action ``a``;
    ``r[a][i]`` the reward expression.  Instances are safe to share across
    threads; all operations on them are pure.
    """

    states: tuple
    actions: tuple
    beta: float
    q: tuple          # (A, S, S) nested tuples of Expr
    r: tuple          # (A, S) nested tuples of Expr
    params: dict = field(default_factory=dict)

    @property
    def state_count(self):
        return len(self.states)

    @property
    def action_count(self):
        return len(self.actions)

    @cached_property
    def param_names(self):
        return tuple(sorted(self.params))

    @cached_property
    def tables(self):
        values = [self.params[name] for name in self.param_names]
        return ModelTables(self.q, self.r, self.param_names, values)

    def q_r(self, m):
        """Rates (A, S, S) and rewards (A, S) evaluated at ``m``."""
        return self.tables.q_r(m)

    def action_index(self, label):
        try:
            return self.actions.index(label)
        except ValueError:
            raise ModelError(f"unknown action label {label!r}") from None

    def strategy_from_labels(self, text):
        """Parse 'a1,a2,...' (one action label or index per state)."""
        parts = [p.strip() for p in text.split(",")]
        if len(parts) != self.state_count:
            raise ModelError(
                f"strategy needs {self.state_count} actions, got {len(parts)}"
            )
        out = []
        for p in parts:
            if p in self.actions:
                out.append(self.actions.index(p))
            elif p.isdigit() and int(p) < self.action_count:
                out.append(int(p))
            else:
                raise ModelError(f"unknown action {p!r}")
        return tuple(out)

    def strategy_labels(self, d):
        return tuple(self.actions[a] for a in d)


def make_model(states, actions, beta, q, r, params=None):
    """Build and structurally validate a :class:`GameModel`.

    ``q`` is indexed [action][from][to], ``r`` [action][state]; entries may
    be expression strings, numbers, or pre-built :class:`Expr` nodes.
    """
    params = dict(params or {})
    states = tuple(str(s) for s in states)
    actions = tuple(str(a) for a in actions)
    S, A = len(states), len(actions)
    if S <= 1:
        raise ModelError(f"need at least 2 states, got {S}")
    if A < 1:
        raise ModelError("need at least 1 action")
    if not 0.0 < beta < 1.0:
        raise ModelError(f"discount beta must lie in (0, 1), got {beta}")
    for name in params:
        if not _PARAM_NAME_RE.match(name) or _VARLIKE_RE.match(name) or name in _RESERVED:
            raise ModelError(f"invalid parameter name {name!r}")
        params[name] = float(params[name])

    def entry(raw, where):
        if isinstance(raw, Expr):
            return raw
        if isinstance(raw, (int, float)):
            return Num(float(raw))
        try:
            return parse_expr(str(raw), S, params)
        except ParseError as exc:
            raise ModelError(f"{where}: {exc}") from exc

    if len(q) != A:
        raise ModelError(f"Q needs {A} action tables, got {len(q)}")
    if len(r) != A:
        raise ModelError(f"r needs {A} action rows, got {len(r)}")
    q_parsed = []
    for a in range(A):
        if len(q[a]) != S or any(len(row) != S for row in q[a]):
            raise ModelError(f"Q[{actions[a]}] must be {S}x{S}")
        q_parsed.append(tuple(
            tuple(entry(q[a][i][j], f"Q[{actions[a]}][{i + 1}][{j + 1}]")
                  for j in range(S))
            for i in range(S)))
    r_parsed = []
    for a in range(A):
        if len(r[a]) != S:
            raise ModelError(f"r[{actions[a]}] must have length {S}")
        r_parsed.append(tuple(
            entry(r[a][i], f"r[{actions[a]}][{i + 1}]") for i in range(S)))
    return GameModel(states, actions, float(beta), tuple(q_parsed),
                     tuple(r_parsed), params)


def with_params(model, overrides):
    """New model with some named parameters replaced."""
    params = dict(model.params)
    for key, value in overrides.items():
        if key not in params:
            raise ModelError(f"model has no parameter {key!r}")
        params[key] = float(value)
    return GameModel(model.states, model.actions, model.beta,
                     model.q, model.r, params)


# --- distributions ---------------------------------------------------------


def check_distribution(v, state_count=None,
                       sum_tol=tol.SIMPLEX_SUM, neg_tol=tol.SIMPLEX_NEG):
    """Validate and return ``v`` as a distribution vector (ndarray copy)."""
    m = np.asarray(v, dtype=np.float64).copy()
    if m.ndim != 1:
        raise ModelError(f"distribution must be a vector, got shape {m.shape}")
    if state_count is not None and m.shape[0] != state_count:
        raise ModelError(f"distribution needs {state_count} entries, got {m.shape[0]}")
    if m.min() < -neg_tol:
        raise ModelError(f"distribution entry {m.min()} below -{neg_tol}")
    if abs(m.sum() - 1.0) > sum_tol:
        raise ModelError(f"distribution sums to {m.sum()}, not 1")
    return m


def project_to_simplex(v, sum_tol=tol.PROJECT_SUM, neg_tol=tol.PROJECT_NEG):
    """Clamp tiny negatives to zero and renormalize.

    Intended to absorb integrator roundoff only: a sum off by more than
    ``sum_tol`` or an entry below ``-neg_tol`` indicates a step that left
    the simplex for real and is reported instead of silently fixed.
    """
    v = np.asarray(v, dtype=np.float64)
    total = v.sum()
    if abs(total - 1.0) > sum_tol or v.min() < -neg_tol:
        raise ModelError(
            f"point too far from the simplex to project (sum {total}, min {v.min()})"
        )
    if v.min() >= 0.0:
        return v if total == 1.0 else v / total
    w = np.clip(v, 0.0, None)
    return w / w.sum()


def simplex_vertices(state_count):
    return np.eye(state_count, dtype=np.float64)


def quasirandom_simplex(state_count, n):
    """Deterministic low-discrepancy interior simplex points (n, S)."""
    if n <= 0:
        return np.empty((0, state_count))
    engine = qmc.Sobol(d=state_count, scramble=False)
    engine.fast_forward(1)  # skip the all-zero point
    size = 1 << max(1, math.ceil(math.log2(n)))
    u = engine.random(size)[:n]
    e = -np.log1p(-u)
    return e / e.sum(axis=1, keepdims=True)


def simplex_lattice(state_count, resolution):
    """All lattice distributions with denominator ``resolution`` (sorted)."""
    points = []
    for combo in itertools.combinations_with_replacement(range(state_count), resolution):
        counts = np.bincount(combo, minlength=state_count)
        points.append(counts / resolution)
    return np.array(points)


def grid_starts(state_count, n):
    """n starts for trajectory sweeps: an m1 sweep for 2 states, else a
    subsampled simplex lattice."""
    if state_count == 2:
        m1 = np.arange(1, n + 1) / (n + 1)
        return np.column_stack([m1, 1.0 - m1])
    resolution = state_count
    while True:
        lattice = simplex_lattice(state_count, resolution)
        if len(lattice) >= n:
            break
        resolution += 1
    idx = np.linspace(0, len(lattice) - 1, n).round().astype(int)
    return lattice[idx]


# --- strategies ------------------------------------------------------------


def all_strategies(model, cap=10 ** 6):
    """Iterate every deterministic stationary strategy (tuples of action
    indices); refuses when A^S exceeds ``cap``."""
    count = model.action_count ** model.state_count
    if count > cap:
        raise ModelError(f"{count} deterministic strategies exceed cap {cap}")
    return itertools.product(range(model.action_count), repeat=model.state_count)


def check_strategy(model, d):
    d = tuple(int(a) for a in d)
    if len(d) != model.state_count:
        raise ModelError(f"strategy needs {model.state_count} entries")
    if any(not 0 <= a < model.action_count for a in d):
        raise ModelError(f"action index out of range in {d}")
    return d


def one_hot_strategy(model, d):
    pi = np.zeros((model.state_count, model.action_count))
    pi[np.arange(model.state_count), list(d)] = 1.0
    return pi


def check_mixed_strategy(model, pi, row_tol=tol.MIXED_ROW_SUM):
    pi = np.asarray(pi, dtype=np.float64)
    if pi.shape != (model.state_count, model.action_count):
        raise ModelError(
            f"mixed strategy must be {model.state_count}x{model.action_count}, got {pi.shape}"
        )
    if pi.min() < -1e-15 or pi.max() > 1.0 + 1e-15:
        raise ModelError("mixed-strategy entries must lie in [0, 1]")
    sums = pi.sum(axis=1)
    if np.abs(sums - 1.0).max() > row_tol:
        raise ModelError(f"mixed-strategy rows must sum to 1, got {sums}")
    return np.clip(pi, 0.0, 1.0)


# --- validation -------------------------------------------------------------


@dataclass
class Violation:
    kind: str          # "negative-rate" | "row-sum" | "evaluation"
    action: int
    i: int             # 1-based state, 0 when not applicable
    j: int
    m: list
    value: float
    message: str = ""

    def to_dict(self, model):
        return {
            "kind": self.kind,
            "action": model.actions[self.action],
            "from_state": self.i,
            "to_state": self.j,
            "m": self.m,
            "value": self.value,
            "message": self.message,
        }


@dataclass
class ValidationReport:
    n_points: int
    violations: list

    @property
    def ok(self):
        return not self.violations

    def to_dict(self, model):
        return {
            "points_checked": self.n_points,
            "ok": self.ok,
            "violations": [v.to_dict(model) for v in self.violations],
        }


def validate_model(model, n_samples=1000, row_tol=tol.ROW_SUM, max_violations=100):
    """Check the conservative-generator invariants by sampling.

    Evaluates every rate entry at ``n_samples`` quasi-random simplex points
    plus all vertices; never raises, returns the offending entries.
    """
    points = np.vstack([
        simplex_vertices(model.state_count),
        quasirandom_simplex(model.state_count, n_samples),
    ])
    violations = []
    for m in points:
        if len(violations) >= max_violations:
            break
        try:
            q = model.tables.q_only(m)
        except Exception as exc:  # noqa: BLE001 - reported, not raised
            violations.append(Violation("evaluation", 0, 0, 0,
                                         [float(x) for x in m], math.nan, str(exc)))
            continue
        off = q.copy()
        for i in range(model.state_count):
            off[:, i, i] = 0.0
        bad = np.argwhere(off < 0.0)
        for a, i, j in bad[:10]:
            violations.append(Violation(
                "negative-rate", int(a), int(i) + 1, int(j) + 1,
                [float(x) for x in m], float(q[a, i, j])))
        rows = q.sum(axis=2)
        bad = np.argwhere(np.abs(rows) > row_tol)
        for a, i in bad[:10]:
            violations.append(Violation(
                "row-sum", int(a), int(i) + 1, 0,
                [float(x) for x in m], float(rows[a, i])))
    return ValidationReport(len(points), violations)


# --- model files ------------------------------------------------------------


def load_model(path):
    """Read a model file (.json or .toml, detected by extension)."""
    path = Path(path)
    if path.suffix.lower() not in (".json", ".toml"):
        raise ModelError(f"unknown model-file extension {path.suffix!r} (need .json or .toml)")
    text = path.read_bytes()
    if path.suffix.lower() == ".toml":
        try:
            import tomllib
        except ImportError:
            import tomli as tomllib
        data = tomllib.loads(text.decode("utf-8"))
    else:
        data = json.loads(text)
    return model_from_dict(data)


def model_from_dict(data):
    try:
        states = data["states"]
        actions = data["actions"]
        beta = data["beta"]
        q_map = data["Q"]
        r_map = data["r"]
    except KeyError as exc:
        raise ModelError(f"model file is missing field {exc.args[0]!r}") from None
    params = data.get("params", {})
    actions = [str(a) for a in actions]
    missing = [a for a in actions if a not in q_map]
    if missing:
        raise ModelError(f"Q has no table for action(s) {missing}")
    missing = [a for a in actions if a not in r_map]
    if missing:
        raise ModelError(f"r has no row for action(s) {missing}")
    q = [q_map[a] for a in actions]
    r = [r_map[a] for a in actions]
    return make_model(states, actions, beta, q, r, params)


def model_to_dict(model):
    return {
        "states": list(model.states),
        "actions": list(model.actions),
        "beta": model.beta,
        "params": dict(sorted(model.params.items())),
        "Q": {
            model.actions[a]: [[to_text(model.q[a][i][j])
                                for j in range(model.state_count)]
                               for i in range(model.state_count)]
            for a in range(model.action_count)
        },
        "r": {
            model.actions[a]: [to_text(model.r[a][i])
                               for i in range(model.state_count)]
            for a in range(model.action_count)
        },
    }


def save_model(model, path):
    """Write the model as .json or .toml (by extension)."""
    path = Path(path)
    data = model_to_dict(model)
    if path.suffix.lower() == ".json":
        path.write_text(json.dumps(data, indent=2) + "\n", encoding="utf-8")
    elif path.suffix.lower() == ".toml":
        path.write_text(_to_toml(data), encoding="utf-8")
    else:
        raise ModelError(f"unknown model-file extension {path.suffix!r} (need .json or .toml)")


def _toml_value(value):
    if isinstance(value, str):
        return json.dumps(value)  # JSON escaping is valid TOML for our charset
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, float)):
        return repr(float(value))
    if isinstance(value, list):
        return "[" + ", ".join(_toml_value(v) for v in value) + "]"
    raise TypeError(f"cannot serialize {value!r} to TOML")


def _to_toml(data):
    lines = [
        f"states = {_toml_value(data['states'])}",
        f"actions = {_toml_value(data['actions'])}",
        f"beta = {_toml_value(data['beta'])}",
        "",
        "[params]",
    ]
    for key, value in data["params"].items():
        lines.append(f"{key} = {_toml_value(value)}")
    for section in ("Q", "r"):
        lines.append("")
        lines.append(f"[{section}]")
        for action, table in data[section].items():
            lines.append(f"{json.dumps(action)} = {_toml_value(table)}")
    return "\n".join(lines) + "\n"
