"""Shared builders: random datasets, materialized-extension oracles, replay."""

from __future__ import annotations

import numpy as np
import pytest

import dynmargin as dm
from dynmargin import core


def noisy_patterns(rng, m, d, nnz_max=None, value_scale=1.0, flip=0.5):
    """Raw patterns with random sparse features; labels are coin flips with
    probability ``flip`` of ignoring the planted direction entirely."""
    nnz_max = nnz_max or d
    u = rng.standard_normal(d)
    pats = []
    for _ in range(m):
        nnz = int(rng.integers(1, nnz_max + 1))
        idx = np.sort(rng.choice(d, size=nnz, replace=False)).astype(np.int32)
        vals = value_scale * rng.standard_normal(nnz)
        if rng.random() < flip:
            lab = int(rng.choice([-1, 1]))
        else:
            lab = 1 if float(u[idx] @ vals) >= 0 else -1
        pats.append(dm.SparsePattern(idx, vals, lab))
    return pats


def noisy_working(seed, m=30, d=6, delta=1.0, rho=1.0, value_scale=1.0):
    rng = np.random.default_rng(seed)
    return dm.build_working(
        noisy_patterns(rng, m, d, value_scale=value_scale), delta=delta, rho=rho
    )


def separable_working(seed, m=30, d=6, margin_frac=0.15, rho=1.0, delta=0.0):
    """Dataset separable by construction in the augmented space: labels come
    from a planted direction and instances too close to its hyperplane
    (normalized margin below ``margin_frac``) are resampled."""
    rng = np.random.default_rng(seed)
    u = rng.standard_normal(d + 1)
    u /= np.linalg.norm(u)
    pats = []
    while len(pats) < m:
        nnz = int(rng.integers(1, d + 1))
        idx = np.sort(rng.choice(d, size=nnz, replace=False)).astype(np.int32)
        vals = rng.standard_normal(nnz)
        aug = np.zeros(d + 1)
        aug[idx] = vals
        aug[d] = rho
        score = float(u @ aug)
        if abs(score) < margin_frac * float(np.linalg.norm(aug)):
            continue
        pats.append(dm.SparsePattern(idx, vals, 1 if score > 0 else -1))
    return dm.build_working(pats, delta=delta, rho=rho)


def materialize(ds):
    """Dense embedding of the working patterns with the virtual slack
    coordinates spelled out: row k is [explicit part, l_k*delta*e_k]."""
    out = np.zeros((ds.m, ds.explicit_dim + ds.m))
    for k in range(ds.m):
        idx, vals = ds.explicit_row(k)
        out[k, idx] = vals
        out[k, ds.explicit_dim + k] = float(ds.labels[k]) * ds.delta
    return out


def materialized_weight(state, ds, mat=None):
    """The weight vector the update history spells out in the dense embedding."""
    if mat is None:
        mat = materialize(ds)
    return state.counts.astype(np.float64) @ mat


def random_state(rng, ds, max_updates=12):
    """A reachable state: some prefix of single updates on random patterns,
    each applied only if its own dynamic condition (at a random accuracy)
    holds, mirroring how real runs produce states."""
    state = core.zero_state(ds)
    eps = float(rng.uniform(0.05, 1.0))
    for _ in range(int(rng.integers(0, max_updates + 1))):
        k = int(rng.integers(ds.m))
        if core.dynamic_condition(state, ds, k, eps):
            core.single_update(state, ds, k)
    return state


def replay_count(state, ds, k, holds, cap=2_000_000):
    """Single-update replay: how many consecutive updates on pattern k until
    its condition turns false.  Returns (count, final state copy)."""
    probe = state.copy()
    n = 0
    while holds(probe, ds, k):
        core.single_update(probe, ds, k)
        n += 1
        if n > cap:
            raise AssertionError("replay did not terminate within the cap")
    return n, probe


def naive_cyclic(ds, rule, seed, max_epochs=200_000):
    """Plain permuted full-dataset cycling, fully independent of the
    schedule module's nesting logic."""
    state = core.zero_state(ds)
    for epoch in range(max_epochs):
        core.refresh_norm_sq(state, ds)
        order = dm.permute(ds.m, seed, epoch)
        updates = 0
        for k in order:
            k = int(k)
            if rule.holds(state, ds, k):
                rule.update(state, ds, k)
                updates += 1
        if updates == 0:
            return state, epoch + 1
    raise AssertionError("naive cycling did not converge")


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
