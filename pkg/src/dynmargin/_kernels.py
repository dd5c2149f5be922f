"""Compiled inner loops: sparse dots, update-count roots, training sweeps.

Everything here operates on the raw CSR arrays of a working dataset plus the
weight state's arrays/scalars, so the hot path never touches Python objects.
The pure-Python reference implementations in :mod:`dynmargin.core` and
:mod:`dynmargin.schedule` call back into the scalar helpers below, which
keeps the two paths bit-for-bit identical.
"""

from __future__ import annotations

import numpy as np
from numba import njit

# Update multiplicities beyond this abort with a diagnostic; the quadratic
# root is finite for admissible states, so hitting the cap means degenerate
# numeric inputs rather than a long but legitimate update.
LAMBDA_CAP = float(1 << 32)

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


@njit(cache=True)
def _mix64(z):
    # SplitMix64 output function (Steele et al. finalizer).
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


@njit(cache=True)
def permutation(m, seed, stream):
    """Fisher-Yates permutation of range(m) driven by SplitMix64.

    The generator state starts at seed + stream * golden_gamma and advances
    by the golden gamma per draw, so (seed, stream) fully determines the
    output on every platform.  Modulo bias is negligible for m << 2**64.
    """
    out = np.arange(m, dtype=np.int64)
    state = np.uint64(seed) + np.uint64(stream) * _GOLDEN
    for i in range(m - 1, 0, -1):
        state = state + _GOLDEN
        r = _mix64(state)
        j = int(r % np.uint64(i + 1))
        tmp = out[i]
        out[i] = out[j]
        out[j] = tmp
    return out


@njit(cache=True)
def dot_one(indptr, indices, values, delta_sq, w, counts, k):
    """a . y_k through the implicit extension: explicit part plus counts[k]*delta^2."""
    acc = counts[k] * delta_sq
    for j in range(indptr[k], indptr[k + 1]):
        acc += w[indices[j]] * values[j]
    return acc


@njit(cache=True)
def dots_all(indptr, indices, values, delta_sq, w, coeff, out):
    """Inner products of a weight vector with every pattern; coeff holds the
    per-pattern virtual coefficients (update counts, or hull weights)."""
    for k in range(out.size):
        acc = coeff[k] * delta_sq
        for j in range(indptr[k], indptr[k + 1]):
            acc += w[indices[j]] * values[j]
        out[k] = acc


@njit(cache=True)
def row_dot(indptr, indices, values, i, j):
    """Explicit-part inner product of patterns i and j (sorted-merge)."""
    a, a_end = indptr[i], indptr[i + 1]
    b, b_end = indptr[j], indptr[j + 1]
    acc = 0.0
    while a < a_end and b < b_end:
        ia = indices[a]
        ib = indices[b]
        if ia == ib:
            acc += values[a] * values[b]
            a += 1
            b += 1
        elif ia < ib:
            a += 1
        else:
            b += 1
    return acc


@njit(cache=True)
def accumulate_rows(indptr, indices, values, coeff, out):
    """out := sum_k coeff[k] * explicit_row(k), overwriting out."""
    out[:] = 0.0
    for k in range(coeff.size):
        c = coeff[k]
        if c != 0.0:
            for j in range(indptr[k], indptr[k + 1]):
                out[indices[j]] += c * values[j]


@njit(cache=True)
def _dyn_satisfied_after(t, a_dot, s, q, eps, lam):
    # Dynamic condition evaluated at the state reached after lam more updates,
    # written exactly like the incremental update path computes it.
    lf = float(lam)
    s1 = s + 2.0 * lf * a_dot + lf * lf * q
    t1 = t + lam
    a1 = a_dot + lf * q
    return a1 <= (1.0 - eps) * s1 / t1


@njit(cache=True)
def _fix_satisfied_after(t, a_dot, s, q, beta, lam):
    lf = float(lam)
    s1 = s + 2.0 * lf * a_dot + lf * lf * q
    a1 = a_dot + lf * q
    if s1 < 0.0:
        s1 = 0.0
    return a1 <= beta * np.sqrt(s1)


@njit(cache=True)
def lambda_dynamic(t, a_dot, s, q, eps):
    """Update multiplicity for the dynamic condition: smallest lam such that
    the pattern violates the condition after lam updates while lam-1 would
    not.  Returns -1 if the count exceeds the 2**32 cap."""
    if t == 0:
        return np.int64(1)
    # Boundary crossing of (t+mu)*(a.y + mu*q) = (1-eps)*(s + 2*mu*a.y + mu^2*q):
    # upward parabola in mu with the satisfied region between its roots.
    aa = eps * q
    bb = t * q + (2.0 * eps - 1.0) * a_dot
    cc = t * a_dot - (1.0 - eps) * s
    # The discriminant bb^2 - 4 aa cc cancels catastrophically near tangency;
    # this factored form is exact and manifestly nonnegative (Cauchy-Schwarz
    # gives q*s >= a_dot^2).
    gram = q * s - a_dot * a_dot
    if gram < 0.0:
        gram = 0.0
    lead = t * q - a_dot
    disc = lead * lead + 4.0 * eps * (1.0 - eps) * gram
    sq = np.sqrt(disc)
    if bb >= 0.0:
        denom = bb + sq
        root = 0.0 if denom <= 0.0 else -2.0 * cc / denom
    else:
        root = (-bb + sq) / (2.0 * aa)
    if root < 0.0:
        root = 0.0
    if root > LAMBDA_CAP:
        return np.int64(-1)
    lam = np.int64(np.floor(root)) + 1
    while lam > 1 and not _dyn_satisfied_after(t, a_dot, s, q, eps, lam - 1):
        lam -= 1
    guard = 0
    while _dyn_satisfied_after(t, a_dot, s, q, eps, lam):
        lam += 1
        guard += 1
        if guard > 1024:
            break
        if float(lam) > LAMBDA_CAP:
            return np.int64(-1)
    return lam


@njit(cache=True)
def lambda_fixed(t, a_dot, s, q, beta):
    """Update multiplicity for the fixed condition via the squared boundary
    equation; roots with a negative post-update inner product are spurious
    artifacts of squaring and are rejected.  Falls back to 1 when no
    admissible root exists (possible only for unattainable margins)."""
    if t == 0 or s <= 0.0:
        return np.int64(1)
    b2 = beta * beta
    aa = q * (q - b2)
    bb = 2.0 * a_dot * (q - b2)
    cc = a_dot * a_dot - b2 * s
    # Factored discriminant of the squared boundary equation (the direct
    # bb^2 - 4 aa cc form cancels catastrophically near tangency); q*s >=
    # a_dot^2 by Cauchy-Schwarz, so in the attainable regime q > beta^2 a
    # crossing always exists.
    gram = q * s - a_dot * a_dot
    if gram < 0.0:
        gram = 0.0
    disc = 4.0 * b2 * (q - b2) * gram
    root = -1.0
    if aa != 0.0:
        if disc >= 0.0:
            sq = np.sqrt(disc)
            qq = -0.5 * (bb + sq) if bb >= 0.0 else -0.5 * (bb - sq)
            r1 = qq / aa
            r2 = cc / qq if qq != 0.0 else r1
            if r1 > r2:
                r1, r2 = r2, r1
            if aa > 0.0:
                # Exit point is the larger root; prefer it when admissible.
                for cand in (r2, r1):
                    post = a_dot + cand * q
                    if cand >= 0.0 and post >= -1e-9 * (abs(a_dot) + cand * q):
                        root = cand
                        break
            else:
                for cand in (r1, r2):
                    post = a_dot + cand * q
                    if cand >= 0.0 and post >= -1e-9 * (abs(a_dot) + cand * q):
                        root = cand
                        break
    elif bb != 0.0:
        cand = -cc / bb
        if cand >= 0.0 and a_dot + cand * q >= -1e-9 * (abs(a_dot) + cand * q):
            root = cand
    if root < 0.0:
        return np.int64(1)
    if root > LAMBDA_CAP:
        return np.int64(-1)
    lam = np.int64(np.floor(root)) + 1
    while lam > 1 and not _fix_satisfied_after(t, a_dot, s, q, beta, lam - 1):
        lam -= 1
    guard = 0
    while _fix_satisfied_after(t, a_dot, s, q, beta, lam):
        lam += 1
        guard += 1
        if guard > 1024:
            return np.int64(1)
        if float(lam) > LAMBDA_CAP:
            return np.int64(-1)
    return lam


@njit(cache=True)
def sweep(
    indptr,
    indices,
    values,
    row_sq,
    delta_sq,
    w,
    counts,
    norm_sq,
    t,
    order,
    mode,
    param,
    multiple,
    collect_mult,
    collect_out,
    trace,
    trace_cap,
    trace_len,
):
    """One cycle through ``order``: test each pattern, update violators, and
    optionally collect the child active set.

    mode 0 is the dynamic condition (param = epsilon), mode 1 the fixed one
    (param = beta).  Membership in the child set is tested against the
    post-update inner product and threshold with multiplier ``collect_mult``
    (<= 0 disables collection).  Update events are recorded into ``trace``
    rows (t, norm_sq, a.y, ||y||^2, lam) while capacity lasts.

    Returns (norm_sq, t, n_updates, n_collected, trace_len, status); status
    bit 1 flags a full trace buffer (training continued, recording stopped).
    """
    n_upd = 0
    n_coll = 0
    status = 0
    one_m_p = 1.0 - param
    for oi in range(order.size):
        k = order[oi]
        a_dot = counts[k] * delta_sq
        for j in range(indptr[k], indptr[k + 1]):
            a_dot += w[indices[j]] * values[j]
        if mode == 0:
            thr = 0.0 if t == 0 else one_m_p * norm_sq / t
        else:
            thr = param * np.sqrt(norm_sq) if norm_sq > 0.0 else 0.0
        post_dot = a_dot
        post_thr = thr
        if a_dot <= thr:
            q = row_sq[k]
            lam = np.int64(1)
            if multiple != 0:
                if mode == 0:
                    lam = lambda_dynamic(t, a_dot, norm_sq, q, param)
                else:
                    lam = lambda_fixed(t, a_dot, norm_sq, q, param)
                if lam < 0:
                    # Multiplicity past the cap happens only on runs diverging
                    # toward an unattainable margin; single steps keep the run
                    # legitimate until the epoch guard reports the failure.
                    lam = np.int64(1)
            if trace_cap > 0:
                if trace_len < trace_cap:
                    trace[trace_len, 0] = float(t)
                    trace[trace_len, 1] = norm_sq
                    trace[trace_len, 2] = a_dot
                    trace[trace_len, 3] = q
                    trace[trace_len, 4] = float(lam)
                    trace_len += 1
                else:
                    status |= 2
            lf = float(lam)
            for j in range(indptr[k], indptr[k + 1]):
                w[indices[j]] += lf * values[j]
            norm_sq += 2.0 * lf * a_dot + lf * lf * q
            counts[k] += lam
            t += lam
            n_upd += 1
            post_dot = a_dot + lf * q
            if mode == 0:
                post_thr = one_m_p * norm_sq / t
            else:
                post_thr = param * np.sqrt(norm_sq) if norm_sq > 0.0 else 0.0
        if collect_mult > 0.0 and post_dot <= collect_mult * post_thr:
            collect_out[n_coll] = k
            n_coll += 1
    return norm_sq, t, n_upd, n_coll, trace_len, status
