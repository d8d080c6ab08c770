"""Built-in example models and their closed-form reference solutions.

Two models ship with the package:

* ``consumer-choice``: two providers, utility increasing in the share of
  customers on the same provider (log of the smoothed share), switching
  implemented with rate b at a per-time cost c, spontaneous churn eps.
* ``congestion``: two service states with a crowding-dependent breakdown
  rate e*m_i + eps into a third, reward-less state that recovers at rate
  lam; switching between the service states at rate b is free.

Both come with independent oracles used by the test suite: the closed-form
switching thresholds of the consumer-choice model, and the scalar Riccati
solution that governs the congestion model on its symmetric surface.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .model import make_model


@dataclass(frozen=True)
class ConsumerChoiceParams:
    b: float = 1.0       # switching rate once a change is decided
    eps: float = 0.1     # spontaneous provider churn
    beta: float = 0.5
    c: float = 0.2       # flow cost while changing
    s1: float = 0.0      # provider-1 base utility
    s2: float = 0.0
    delta: float = 0.01  # smoothing width of the log utility

    def validate(self):
        if not (self.b > 0 and self.eps > 0 and self.c > 0 and self.delta > 0):
            raise ValueError("b, eps, c, delta must be positive")
        if not self.eps < self.b:
            raise ValueError(f"need eps < b, got eps={self.eps}, b={self.b}")
        if not 0.0 < self.beta < 1.0:
            raise ValueError(f"beta must lie in (0, 1), got {self.beta}")


@dataclass(frozen=True)
class CongestionParams:
    b: float = 1.0       # switching rate between the two service states
    e: float = 1.0       # congestion coefficient of the breakdown rate
    eps: float = 0.5     # baseline breakdown rate
    lam: float = 1.0     # recovery rate from the bad state
    beta: float = 0.5

    def validate(self):
        if not (self.b > 0 and self.e > 0 and self.eps > 0 and self.lam > 0):
            raise ValueError("b, e, eps, lam must be positive")
        if not 0.0 < self.beta < 1.0:
            raise ValueError(f"beta must lie in (0, 1), got {self.beta}")


def consumer_choice_model(params=ConsumerChoiceParams()):
    params.validate()
    slog1 = f"slog(m1, {params.delta!r})"
    slog2 = f"slog(m2, {params.delta!r})"
    return make_model(
        states=("1", "2"),
        actions=("stay", "change"),
        beta=params.beta,
        q=[
            [["-eps", "eps"], ["eps", "-eps"]],
            [["-b", "b"], ["b", "-b"]],
        ],
        r=[
            [f"{slog1} + s1", f"{slog2} + s2"],
            [f"{slog1} + s1 - c", f"{slog2} + s2 - c"],
        ],
        params={"b": params.b, "eps": params.eps, "c": params.c,
                "s1": params.s1, "s2": params.s2},
    )


def consumer_choice_thresholds(params=ConsumerChoiceParams()):
    """(k1, k2): the m1 values where the best-response set changes.

    Below k1 state 1 switches away, between k1 and k2 everyone stays,
    above k2 state 2 switches away.
    """
    params.validate()
    x = params.c * (params.beta + 2.0 * params.eps) / (params.b - params.eps)
    shift = params.s2 - params.s1
    return _logistic(-x + shift), _logistic(x + shift)


def _logistic(z):
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    t = math.exp(z)
    return t / (1.0 + t)


def congestion_model(params=CongestionParams()):
    params.validate()
    return make_model(
        states=("1", "2", "3"),
        actions=("change", "stay"),
        beta=params.beta,
        q=[
            [
                ["-(b + e*m1 + eps)", "b", "e*m1 + eps"],
                ["b", "-(b + e*m2 + eps)", "e*m2 + eps"],
                ["lam", "lam", "-2*lam"],
            ],
            [
                ["-(e*m1 + eps)", "0", "e*m1 + eps"],
                ["0", "-(e*m2 + eps)", "e*m2 + eps"],
                ["lam", "lam", "-2*lam"],
            ],
        ],
        r=[
            ["1", "1", "0"],
            ["1", "1", "0"],
        ],
        params={"b": params.b, "e": params.e, "eps": params.eps, "lam": params.lam},
    )


def congestion_riccati_roots(params=CongestionParams()):
    """Roots (u_plus, u_minus) of e u^2 + (eps + 2 lam) u - lam = 0; u_plus
    is the share of each service state at the symmetric rest point."""
    params.validate()
    p = params.eps + 2.0 * params.lam
    disc = math.sqrt(p * p + 4.0 * params.e * params.lam)
    return (-p + disc) / (2.0 * params.e), (-p - disc) / (2.0 * params.e)


def congestion_fixed_point(params=CongestionParams()):
    """Rest distribution (u, u, 1 - 2u) of the symmetric-surface dynamics."""
    u_plus, _ = congestion_riccati_roots(params)
    return (u_plus, u_plus, 1.0 - 2.0 * u_plus)


def congestion_riccati_reference(params, m1_0, t):
    """Closed-form m1(t) of dm1/dt = -e m1^2 - (eps + 2 lam) m1 + lam from a
    symmetric start (m1_0, m1_0, 1 - 2 m1_0); the sliding-motion oracle."""
    if not 0.0 <= m1_0 <= 0.5:
        raise ValueError(f"symmetric starts need m1_0 in [0, 1/2], got {m1_0}")
    if t < 0:
        raise ValueError(f"t must be nonnegative, got {t}")
    if t == 0.0:
        return float(m1_0)
    u_plus, u_minus = congestion_riccati_roots(params)
    if m1_0 == u_plus:
        return u_plus
    decay = math.exp(-params.e * (u_plus - u_minus) * t)
    k = (m1_0 - u_plus) / (m1_0 - u_minus)
    return (u_plus - u_minus * k * decay) / (1.0 - k * decay)


BUILTIN_EXAMPLES = ("consumer-choice", "congestion")


def build_example(name, overrides=None):
    """Construct a built-in example model; ``overrides`` map parameter names
    (including ``beta``) to values."""
    overrides = dict(overrides or {})
    if name == "consumer-choice":
        cls = ConsumerChoiceParams
        build = consumer_choice_model
    elif name == "congestion":
        cls = CongestionParams
        build = congestion_model
    else:
        raise ValueError(
            f"unknown example {name!r}; available: {', '.join(BUILTIN_EXAMPLES)}")
    fields = {f for f in cls.__dataclass_fields__}
    unknown = set(overrides) - fields
    if unknown:
        raise ValueError(f"unknown parameter(s) {sorted(unknown)} for {name}; "
                         f"available: {sorted(fields)}")
    return build(cls(**{k: float(v) for k, v in overrides.items()}))
