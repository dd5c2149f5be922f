"""Closed-form convergence-bound calculators and the after-run accuracy estimate.

All calculators are pure functions of (epsilon, R, gamma_d) style inputs.
The dynamic-rule bound for small epsilon grows like (R/gamma_d)**(1/epsilon),
so those branches are evaluated in log space and return ``inf`` past the
float64 range; callers compare against actual update counts, for which an
infinite bound is still a valid (vacuous) upper bound.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

_E = math.e
_LOG_MAX = 709.0  # exp() overflows float64 just above this
_HALF_TOL = 1e-12  # epsilon this close to 1/2 routes to the singular-free branch


def _exp_or_inf(log_value: float) -> float:
    return math.inf if log_value > _LOG_MAX else math.exp(log_value)


@dataclass(frozen=True)
class BoundInputs:
    """Validated inputs shared by the bound calculators.

    ``delta_lemma``/``C_lemma`` feed :func:`lemma1_t0`; ``N``/``alpha_N``
    describe a warm start (update count and its norm ratio ``||a_N||/(R N)``)
    for :func:`dynamic_loose_t0`.
    """

    epsilon: float
    R: float
    gamma_d: float
    delta_lemma: Optional[float] = None
    C_lemma: Optional[float] = None
    N: Optional[int] = None
    alpha_N: Optional[float] = None

    def __post_init__(self):
        if not 0.0 < self.epsilon <= 1.0:
            raise ValueError("epsilon must be in (0, 1]")
        if not self.R >= self.gamma_d > 0.0:
            raise ValueError("need R >= gamma_d > 0")
        if (self.delta_lemma is None) != (self.C_lemma is None):
            raise ValueError("delta_lemma and C_lemma go together")
        if self.delta_lemma is not None and self.delta_lemma < math.exp(-self.C_lemma):
            raise ValueError("need delta >= exp(-C)")
        if self.N is not None and self.N < 1:
            raise ValueError("N must be at least 1")
        if self.alpha_N is not None:
            if not self.gamma_d / self.R <= self.alpha_N <= 1.0:
                raise ValueError("alpha_N must lie in [gamma_d/R, 1]")

    def theorem1(self) -> float:
        return theorem1_bound(self.epsilon, self.R, self.gamma_d)

    def theorem2(self) -> "Theorem2Result":
        return theorem2_bound(self.epsilon, self.R, self.gamma_d)


def lemma1_t0(delta: float, C: float) -> float:
    """Explicit upper bound t0 on any t >= exp(-C) with t < delta*(1 + C + ln t).

    Requires delta >= exp(-C) (at equality the admissible range is empty and
    the formula still evaluates); the returned t0 satisfies
    t0/(1 + C + ln t0) >= delta.
    """
    if delta < math.exp(-C):
        raise ValueError("need delta >= exp(-C)")
    return (1.0 + 1.0 / _E) * delta * (C + math.log((1.0 + _E) * delta))


def theorem1_bound(epsilon: float, R: float, gamma_d: float) -> float:
    """Update-count bound for the fixed-margin rule at beta = (1-eps)*gamma_d."""
    _validate(epsilon, R, gamma_d)
    g = gamma_d / R
    a = 1.0 - g * (1.0 - epsilon)
    r_sq = (R / gamma_d) ** 2
    return ((1.0 + 1.0 / _E) / (2.0 * epsilon)) * r_sq * (
        4.0 * g * a + math.log((1.0 + _E) / epsilon * (R / gamma_d) * a)
    )


@dataclass(frozen=True)
class Theorem2Result:
    """Update-count bound for the dynamic-margin rule: the first-pass value
    t0 and the tightened bound obtained by feeding t0 back into the defining
    inequality.  ``bound`` (== tightened) is the value the guarantee states."""

    loose_t0: float
    bound: float


def dynamic_loose_t0(epsilon: float, R: float, gamma_d: float, N: int, alpha_N: float) -> float:
    """First-pass bound N * (alpha_N R/gamma)^(1/eps) * (1 + alpha_N^-2 N^-1 /
    (1-2 eps))^(1/(2 eps)) for the dynamic rule with eps < 1/2, warm-started
    after N updates at norm ratio alpha_N."""
    if not 0.0 < epsilon < 0.5:
        raise ValueError("this form needs 0 < epsilon < 1/2")
    if N < 1:
        raise ValueError("N must be at least 1")
    if alpha_N <= 0.0:
        raise ValueError("alpha_N must be positive")
    _validate(1.0, R, gamma_d)
    log_t0 = (
        math.log(N)
        + (1.0 / epsilon) * math.log(alpha_N * R / gamma_d)
        + (0.5 / epsilon) * math.log1p(1.0 / (alpha_N * alpha_N * N * (1.0 - 2.0 * epsilon)))
    )
    return _exp_or_inf(log_t0)


def theorem2_bound(epsilon: float, R: float, gamma_d: float) -> Theorem2Result:
    """Update-count bound for the dynamic-margin rule, all three regimes.

    Below 1/2 the loose t0 uses the integer part of 1/epsilon as warm-start
    count with the least favorable norm ratio 1; at exactly 1/2 (within
    1e-12) a single log-based formula applies; above 1/2 the bound is a
    rational multiple of (R/gamma_d)^2.
    """
    _validate(epsilon, R, gamma_d)
    r_sq = (R / gamma_d) ** 2
    if abs(epsilon - 0.5) <= _HALF_TOL:
        value = (1.0 + 1.0 / _E) * r_sq * math.log((1.0 + _E) * r_sq)
        return Theorem2Result(value, value)
    if epsilon < 0.5:
        n_warm = int(math.floor(1.0 / epsilon + 1e-12))
        t0 = dynamic_loose_t0(epsilon, R, gamma_d, n_warm, 1.0)
        if math.isinf(t0):
            return Theorem2Result(t0, t0)
        shrink = r_sq / ((1.0 - 2.0 * epsilon) * t0)
        tightened = _exp_or_inf(math.log(t0) + (0.5 / epsilon) * math.log1p(-shrink))
        return Theorem2Result(t0, tightened)
    t0 = epsilon * (3.0 - 2.0 * epsilon) / (2.0 * epsilon - 1.0) * r_sq
    tightened = t0 * (1.0 - 2.0 * (1.0 - epsilon) * t0 ** (1.0 - 2.0 * epsilon))
    return Theorem2Result(t0, tightened)


def after_run_estimate(gamma_prime_d: float, t_c: int, norm_a: float) -> float:
    """Computable bound 1 - gamma_prime_d * t_c / norm_a on the relative gap
    between the achieved and the maximum directional margin."""
    if t_c <= 0:
        raise ValueError("t_c must be positive")
    if norm_a <= 0.0:
        raise ValueError("norm_a must be positive")
    if gamma_prime_d <= 0.0:
        raise ValueError("gamma_prime_d must be positive")
    cap = norm_a / t_c
    if gamma_prime_d > cap * (1.0 + 1e-9):
        raise ValueError("gamma_prime_d exceeds the running upper bound norm_a/t_c")
    est = 1.0 - gamma_prime_d * t_c / norm_a
    return min(max(est, 0.0), math.nextafter(1.0, 0.0))


def succ_ratio_bound(epsilon_n: float, eta: float, t_cn: int, R: float, gamma_d: float) -> float:
    """Bound on the next stage's cumulative update count when the accuracy
    drops from epsilon_n to epsilon_n/eta after converging in t_cn updates.

    Instance of :func:`dynamic_loose_t0` at epsilon_n/eta with warm start
    N = t_cn and the least favorable norm ratio (1-epsilon_n)^-1 gamma_d/R.
    """
    if not 0.0 < epsilon_n < 0.5:
        raise ValueError("this form needs 0 < epsilon_n < 1/2")
    if eta <= 1.0:
        raise ValueError("eta must exceed 1")
    if t_cn < 1:
        raise ValueError("t_cn must be at least 1")
    _validate(1.0, R, gamma_d)
    one_m = 1.0 - epsilon_n
    log_bound = (
        math.log(t_cn)
        + (eta / epsilon_n) * math.log(1.0 / one_m)
        + (eta / (2.0 * epsilon_n))
        * math.log1p((one_m * one_m / (1.0 - 2.0 * epsilon_n / eta)) * (R / gamma_d) ** 2 / t_cn)
    )
    return _exp_or_inf(log_bound)


def _validate(epsilon: float, R: float, gamma_d: float) -> None:
    if not 0.0 < epsilon <= 1.0:
        raise ValueError("epsilon must be in (0, 1]")
    if not R >= gamma_d > 0.0:
        raise ValueError("need R >= gamma_d > 0")
