"""Nested active-set presentation schedule with per-epoch permutations.

This is purely a pattern-presentation policy: the update test itself is
always the rule's own condition, so any margin guarantee that holds under
naive cycling holds here too.  Three nested "active" index sets are rebuilt
from scratch as their parent level is cycled, each holding the patterns
whose post-visit inner product stayed within a multiple (c1 >= c2 >= 1) of
the current threshold, and each is replayed for a bounded number of rounds
or until a round performs no update.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import _kernels, core
from .data import WorkingDataset

DEFAULT_MAX_EPOCHS = 1_000_000

_EMPTY = np.zeros(0, dtype=np.int64)


@dataclass(frozen=True)
class ActiveSetConfig:
    """Active-set multipliers, round counts, and the permutation seed."""

    c1: float = 2.2
    c2: float = 1.1
    n_ep1: int = 9
    n_ep2: int = 12
    n_ep3: int = 12
    seed: int = 0

    def __post_init__(self):
        if not self.c1 >= self.c2 >= 1.0:
            raise ValueError("need c1 >= c2 >= 1")
        if min(self.n_ep1, self.n_ep2, self.n_ep3) < 1:
            raise ValueError("round counts must be positive")


class MaxEpochsExceeded(RuntimeError):
    """Training did not converge within the full-epoch guard."""

    def __init__(self, epochs: int, updates: int):
        super().__init__(
            f"no convergence after {epochs} full epochs ({updates} updates); "
            "the data may be inseparable (delta = 0) or the target margin unattainable"
        )
        self.epochs = epochs
        self.updates = updates


class UpdateTrace:
    """Growable record of update events: rows (t, norm_sq, a.y, ||y||^2, lam),
    all captured immediately before the event's updates were applied."""

    def __init__(self, capacity: int = 1 << 16):
        self.rows = np.zeros((capacity, 5))
        self.n = 0
        self.overflowed = False

    @property
    def capacity(self) -> int:
        return self.rows.shape[0]

    def view(self) -> np.ndarray:
        return self.rows[: self.n]

    def append(self, t, norm_sq, a_dot, q, lam):
        if self.n >= self.capacity:
            self.overflowed = True
            return
        self.rows[self.n] = (t, norm_sq, a_dot, q, lam)
        self.n += 1


def permute(m: int, seed: int, epoch_index: int) -> np.ndarray:
    """Deterministic Fisher-Yates permutation of range(m) keyed on
    (seed, epoch_index); identical output on every platform."""
    if m < 1:
        raise ValueError("m must be at least 1")
    return _kernels.permutation(m, seed & 0xFFFFFFFFFFFFFFFF, epoch_index)


def run_until_convergence(
    state: core.WeightState,
    ds: WorkingDataset,
    condition,
    updater: Optional[Callable] = None,
    cfg: Optional[ActiveSetConfig] = None,
    *,
    max_epochs: int = DEFAULT_MAX_EPOCHS,
    epoch_offset: int = 0,
    first_epoch_single: bool = False,
    first_epoch_c1: Optional[float] = None,
    trace: Optional[UpdateTrace] = None,
) -> int:
    """Train until one complete full-dataset pass performs zero updates.

    ``condition`` supplies the misclassification test (``holds``) and its
    threshold; ``updater(state, ds, k)`` applies the update for a violating
    pattern and returns the multiplicity.  With ``updater`` omitted the
    rule's own update is used and the compiled sweep takes over.

    ``first_epoch_single`` restricts the very first full-dataset pass to
    single updates, and ``first_epoch_c1`` overrides the level-1 multiplier
    during that pass only (both used by the plain dynamic-margin trainer).
    ``epoch_offset`` shifts the permutation stream so successive stages of
    one run draw fresh orders.

    Returns the number of full-dataset passes; raises
    :class:`MaxEpochsExceeded` when the guard trips.
    """
    cfg = cfg or ActiveSetConfig()
    if ds.m == 0:
        raise ValueError("cannot train on an empty dataset")
    rule_like = isinstance(condition, (core.DynamicMarginRule, core.FixedMarginRule))
    if updater is None:
        if not rule_like:
            raise TypeError("updater is required for custom conditions")
        updater = condition.update
    fast = rule_like and updater == condition.update
    if (first_epoch_single or first_epoch_c1 is not None) and not rule_like:
        raise ValueError("first-epoch overrides need a standard margin rule")
    single_updater = core.single_update_variant(condition).update if first_epoch_single else None

    collect_buf = np.empty(ds.m, dtype=np.int64)
    if trace is not None:
        trace_rows, trace_cap = trace.rows, trace.capacity
    else:
        trace_rows, trace_cap = np.zeros((0, 5)), 0

    def sweep_fast(order: np.ndarray, collect_mult: float, force_single: bool):
        multiple = 0 if force_single else int(condition.multiple)
        tlen = trace.n if trace is not None else 0
        norm_sq, t, n_upd, n_coll, tlen, status = _kernels.sweep(
            ds.indptr,
            ds.indices,
            ds.values,
            ds.row_sq,
            ds.delta_sq,
            state.w_explicit,
            state.counts,
            state.norm_sq,
            state.t,
            order,
            condition.kernel_mode,
            condition.kernel_param,
            multiple,
            collect_mult,
            collect_buf,
            trace_rows,
            trace_cap,
            tlen,
        )
        state.norm_sq = float(norm_sq)
        state.t = int(t)
        if trace is not None:
            trace.n = int(tlen)
            if status & 2:
                trace.overflowed = True
        child = collect_buf[:n_coll].copy() if collect_mult > 0.0 else _EMPTY
        return n_upd, child

    def sweep_generic(order: np.ndarray, collect_mult: float, force_single: bool):
        upd = single_updater if force_single else updater
        n_upd = 0
        child = []
        for k in order:
            k = int(k)
            a_dot = core.dot(state, ds, k)
            post_dot = a_dot
            if condition.holds(state, ds, k):
                pre_t, pre_s = state.t, state.norm_sq
                lam = upd(state, ds, k)
                if trace is not None:
                    trace.append(pre_t, pre_s, a_dot, float(ds.row_sq[k]), lam)
                n_upd += 1
                # The updater adds lam copies of y_k, so the post-visit inner
                # product follows incrementally (same arithmetic as the
                # compiled sweep).
                post_dot = a_dot + float(lam) * float(ds.row_sq[k])
            if collect_mult > 0.0:
                if post_dot <= collect_mult * condition.threshold(state):
                    child.append(k)
        return n_upd, np.asarray(child, dtype=np.int64) if child else _EMPTY

    sweep = sweep_fast if fast else sweep_generic

    def level2_round(level2: np.ndarray) -> int:
        n, level3 = sweep(level2, 1.0, False)
        total = n
        for _ in range(cfg.n_ep3):
            if level3.size == 0:
                break
            n3, _ = sweep(level3, 0.0, False)
            total += n3
            if n3 == 0:
                break
        return total

    def level1_round(level1: np.ndarray) -> int:
        n, level2 = sweep(level1, cfg.c2, False)
        total = n
        for _ in range(cfg.n_ep2):
            if level2.size == 0:
                break
            done = level2_round(level2)
            total += done
            if done == 0:
                break
        return total

    for epoch in range(max_epochs):
        core.refresh_norm_sq(state, ds)
        order = permute(ds.m, cfg.seed, epoch_offset + epoch)
        first = epoch == 0
        c1 = first_epoch_c1 if (first and first_epoch_c1 is not None) else cfg.c1
        n_upd, level1 = sweep(order, c1, first and first_epoch_single)
        if n_upd == 0:
            return epoch + 1
        for _ in range(cfg.n_ep1):
            if level1.size == 0:
                break
            done = level1_round(level1)
            if done == 0:
                break
    raise MaxEpochsExceeded(max_epochs, state.t)
