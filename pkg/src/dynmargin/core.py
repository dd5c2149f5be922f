"""Weight state and the perceptron update machinery on the implicit extension.

A weight vector lives in the working space: a dense explicit part plus one
virtual coordinate per pattern.  Because pattern k's virtual coordinate only
ever meets the weight's own count-based component, every virtual inner
product collapses to ``counts[k] * delta**2``, so the state needs O(dim + m)
memory regardless of how many updates occur.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import ClassVar

import numpy as np

from . import _kernels
from .data import WorkingDataset

LAMBDA_CAP = int(_kernels.LAMBDA_CAP)


@dataclass
class WeightState:
    """Explicit weights, per-pattern update counts, cached squared norm, and t.

    Invariants: ``t == counts.sum()`` and
    ``norm_sq == ||w_explicit||^2 + delta^2 * sum(counts^2)``; the cache is
    maintained incrementally and refreshed from scratch once per full epoch
    to bound drift.  Mutated by exactly one training thread.
    """

    w_explicit: np.ndarray
    counts: np.ndarray
    norm_sq: float = 0.0
    t: int = 0

    def copy(self) -> "WeightState":
        return WeightState(self.w_explicit.copy(), self.counts.copy(), self.norm_sq, self.t)

    @property
    def norm(self) -> float:
        return math.sqrt(self.norm_sq) if self.norm_sq > 0 else 0.0


@dataclass(frozen=True)
class MarginReport:
    """Achieved directional margin min_k (a.y_k)/||a|| and the pattern attaining it."""

    gamma_prime_d: float
    argmin_k: int


def zero_state(ds: WorkingDataset) -> WeightState:
    return WeightState(np.zeros(ds.explicit_dim), np.zeros(ds.m, dtype=np.int64))


def dot(state: WeightState, ds: WorkingDataset, k: int) -> float:
    """a_t . y_k = w_explicit . ybar_k + counts[k] * delta^2."""
    return float(
        _kernels.dot_one(
            ds.indptr, ds.indices, ds.values, ds.delta_sq, state.w_explicit, state.counts, k
        )
    )


def all_dots(state: WeightState, ds: WorkingDataset) -> np.ndarray:
    out = np.empty(ds.m)
    _kernels.dots_all(
        ds.indptr,
        ds.indices,
        ds.values,
        ds.delta_sq,
        state.w_explicit,
        state.counts.astype(np.float64),
        out,
    )
    return out


def dynamic_threshold(state: WeightState, epsilon: float) -> float:
    """(1-epsilon) * ||a||^2 / t, or 0 before the first update."""
    if state.t == 0:
        return 0.0
    return (1.0 - epsilon) * state.norm_sq / state.t


def dynamic_condition(state: WeightState, ds: WorkingDataset, k: int, epsilon: float) -> bool:
    """True (meaning: update) iff a.y_k does not exceed the dynamic threshold."""
    if not 0.0 < epsilon <= 1.0:
        raise ValueError("epsilon must be in (0, 1]")
    return dot(state, ds, k) <= dynamic_threshold(state, epsilon)


def fixed_threshold(state: WeightState, beta: float) -> float:
    return beta * math.sqrt(state.norm_sq) if state.norm_sq > 0.0 else 0.0


def fixed_condition(state: WeightState, ds: WorkingDataset, k: int, beta: float) -> bool:
    """True iff a.y_k <= beta * ||a|| (reduces to a.y_k <= 0 at t = 0)."""
    if beta <= 0.0:
        raise ValueError("beta must be positive")
    return dot(state, ds, k) <= fixed_threshold(state, beta)


def apply_multiple(state: WeightState, ds: WorkingDataset, k: int, lam: int) -> WeightState:
    """Add lam copies of y_k to the weight state in one shot.

    Equivalent in exact arithmetic to lam repeated single updates: the
    explicit part and counts are linear, and the cached norm advances by
    2*lam*(a.y_k) + lam^2*||y_k||^2.
    """
    if lam < 1:
        raise ValueError("lam must be at least 1")
    a_dot = dot(state, ds, k)
    lo, hi = ds.indptr[k], ds.indptr[k + 1]
    lf = float(lam)
    state.w_explicit[ds.indices[lo:hi]] += lf * ds.values[lo:hi]
    state.norm_sq += 2.0 * lf * a_dot + lf * lf * ds.row_sq[k]
    state.counts[k] += lam
    state.t += lam
    return state


def single_update(state: WeightState, ds: WorkingDataset, k: int) -> WeightState:
    """Classical perceptron update a_{t+1} = a_t + y_k."""
    return apply_multiple(state, ds, k, 1)


def multiple_update_count_dynamic(
    state: WeightState, ds: WorkingDataset, k: int, epsilon: float
) -> int:
    """Closed-form count of consecutive updates on y_k that just clears the
    dynamic condition.  Requires t >= 1 and the condition currently holding."""
    if state.t < 1:
        raise ValueError("multiple updates need t >= 1; perform a single update first")
    lam = int(
        _kernels.lambda_dynamic(
            state.t, dot(state, ds, k), state.norm_sq, float(ds.row_sq[k]), epsilon
        )
    )
    if lam < 0:
        raise RuntimeError(
            f"multiple-update count exceeded {LAMBDA_CAP} on pattern {k}; "
            "inputs are numerically degenerate"
        )
    return lam


def multiple_update_count_fixed(
    state: WeightState, ds: WorkingDataset, k: int, beta: float
) -> int:
    """Closed-form count for the fixed condition, from the squared boundary
    equation with spurious (negative inner product) roots rejected."""
    lam = int(
        _kernels.lambda_fixed(
            state.t, dot(state, ds, k), state.norm_sq, float(ds.row_sq[k]), beta
        )
    )
    if lam < 0:
        raise RuntimeError(
            f"multiple-update count exceeded {LAMBDA_CAP} on pattern {k}; "
            "inputs are numerically degenerate"
        )
    return lam


def evaluate_margin(state: WeightState, ds: WorkingDataset) -> MarginReport:
    """Directional margin of the current weights; ties break to the lowest index."""
    if state.t <= 0 or state.norm_sq <= 0.0:
        raise ValueError("margin undefined for a zero weight vector")
    dots = all_dots(state, ds)
    k = int(np.argmin(dots))
    return MarginReport(gamma_prime_d=float(dots[k]) / math.sqrt(state.norm_sq), argmin_k=k)


def refresh_norm_sq(state: WeightState, ds: WorkingDataset) -> float:
    """Recompute the cached squared norm from scratch; returns the drift removed."""
    w = state.w_explicit
    cf = state.counts.astype(np.float64)
    exact = float(np.dot(w, w)) + ds.delta_sq * float(np.dot(cf, cf))
    drift = state.norm_sq - exact
    state.norm_sq = exact
    return drift


def _lambda_or_single(lam: int) -> int:
    # Counts past the cap occur only on runs diverging toward an unattainable
    # margin; a single step keeps the run legitimate until the epoch guard
    # reports the failure.
    lam = int(lam)
    return lam if lam >= 1 else 1


def _eq6_sides(t: float, s: float, a_dot: float, q: float) -> tuple[float, float]:
    # Both sides of the consecutive-ratio identity across one single update,
    # from the pre-update scalars alone.
    t1 = t + 1.0
    s1 = s + 2.0 * a_dot + q
    a1 = a_dot + q
    lhs = s / (t * t) - s1 / (t1 * t1)
    rhs = ((s / t - a_dot) + (s1 / t1 - a1)) / (t * t1)
    return lhs, rhs


def eq6_residual(
    state_before: WeightState, state_after: WeightState, ds: WorkingDataset, k: int
) -> float:
    """LHS - RHS of the bookkeeping identity linking consecutive ||a||^2/t^2
    values across one single update on pattern k; zero in exact arithmetic."""
    tb, ta = state_before.t, state_after.t
    if tb < 1 or ta != tb + 1:
        raise ValueError("states must be one single update apart with t > 0")
    db = dot(state_before, ds, k)
    da = dot(state_after, ds, k)
    lhs = state_before.norm_sq / (tb * tb) - state_after.norm_sq / (ta * ta)
    rhs = ((state_before.norm_sq / tb - db) + (state_after.norm_sq / ta - da)) / (tb * ta)
    return lhs - rhs


@dataclass
class DynamicMarginRule:
    """Update policy for the dynamic condition a.y <= (1-eps) ||a||^2 / t.

    ``update`` performs one presentation's worth of updates (a single one, or
    the closed-form multiple) and returns the multiplicity applied.
    """

    epsilon: float
    multiple: bool = True
    kernel_mode: ClassVar[int] = 0

    def __post_init__(self):
        if not 0.0 < self.epsilon <= 1.0:
            raise ValueError("epsilon must be in (0, 1]")

    @property
    def kernel_param(self) -> float:
        return self.epsilon

    def threshold(self, state: WeightState) -> float:
        return dynamic_threshold(state, self.epsilon)

    def holds(self, state: WeightState, ds: WorkingDataset, k: int) -> bool:
        return dot(state, ds, k) <= self.threshold(state)

    def update(self, state: WeightState, ds: WorkingDataset, k: int) -> int:
        lam = 1
        if self.multiple and state.t >= 1:
            lam = _lambda_or_single(
                _kernels.lambda_dynamic(
                    state.t, dot(state, ds, k), state.norm_sq, float(ds.row_sq[k]), self.epsilon
                )
            )
        apply_multiple(state, ds, k, lam)
        return lam


@dataclass
class FixedMarginRule:
    """Update policy for the fixed condition a.y <= beta * ||a||."""

    beta: float
    multiple: bool = True
    kernel_mode: ClassVar[int] = 1

    def __post_init__(self):
        if self.beta <= 0.0:
            raise ValueError("beta must be positive")

    @property
    def kernel_param(self) -> float:
        return self.beta

    def threshold(self, state: WeightState) -> float:
        return fixed_threshold(state, self.beta)

    def holds(self, state: WeightState, ds: WorkingDataset, k: int) -> bool:
        return dot(state, ds, k) <= self.threshold(state)

    def update(self, state: WeightState, ds: WorkingDataset, k: int) -> int:
        lam = 1
        if self.multiple:
            lam = _lambda_or_single(
                _kernels.lambda_fixed(
                    state.t, dot(state, ds, k), state.norm_sq, float(ds.row_sq[k]), self.beta
                )
            )
        apply_multiple(state, ds, k, lam)
        return lam


def single_update_variant(rule):
    """The same rule with multiple updates turned off."""
    return replace(rule, multiple=False)
