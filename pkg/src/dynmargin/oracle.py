"""Independent maximum-margin computation via the nearest point of the pattern hull.

The maximum directional margin of a separable working dataset equals the
distance from the origin to the convex hull of its patterns, so a
nearest-point iteration over the hull gives an oracle for gamma_d that is
completely independent of the training path.  It runs on the same
implicit-extension inner products as the trainer, so it exercises that
machinery as well.  Desk-scale tool: precise, not fast.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .data import WorkingDataset


@dataclass(frozen=True)
class OracleResult:
    """Margin estimate with its convex-combination certificate.

    ``gamma_d`` equals ``upper`` (the norm of the best hull point found);
    ``lower`` is the matching directional lower bracket, so the true margin
    lies in [lower, upper] regardless of convergence.  The certificate
    coefficients are nonnegative and sum to one.
    """

    gamma_d: float
    certificate: np.ndarray
    iterations: int
    tol_achieved: float
    converged: bool
    lower: float
    upper: float


def _hull_point(ds: WorkingDataset, lam: np.ndarray, out: np.ndarray) -> None:
    _kernels.accumulate_rows(ds.indptr, ds.indices, ds.values, lam, out)


def gilbert_gamma_d(ds: WorkingDataset, tol: float = 1e-9, max_iter: int = 200_000) -> OracleResult:
    """Minimize ||p|| over the convex hull of the working patterns.

    Nearest-point iteration: at each step move toward the pattern minimizing
    p.y_k (with exact line search), or shift weight from the worst support
    pattern to the best one when that decreases ||p|| more; the second kind
    of step avoids stalling near faces.  Terminates once the duality gap
    ||p|| - min_k (p.y_k)/||p|| drops to ``tol``; each iterate brackets the
    true margin from both sides.
    """
    m = ds.m
    if m < 1:
        raise ValueError("need at least one pattern")
    if tol <= 0.0:
        raise ValueError("tol must be positive")
    delta_sq = ds.delta_sq
    lam = np.zeros(m)
    k0 = int(np.argmin(ds.row_sq))
    lam[k0] = 1.0
    p = np.zeros(ds.explicit_dim)
    _hull_point(ds, lam, p)
    dots = np.empty(m)
    best_lower = -math.inf
    best_upper = math.inf
    best_gap = math.inf
    iterations = 0
    for it in range(1, max_iter + 1):
        iterations = it
        if it % 512 == 0:
            # Rebuild p from the certificate to shed incremental drift.
            _hull_point(ds, lam, p)
        _kernels.dots_all(ds.indptr, ds.indices, ds.values, delta_sq, p, lam, dots)
        p_sq = float(np.dot(p, p)) + delta_sq * float(np.dot(lam, lam))
        if p_sq <= 0.0:
            return OracleResult(
                gamma_d=0.0,
                certificate=lam,
                iterations=it,
                tol_achieved=math.inf,
                converged=False,
                lower=-math.inf,
                upper=0.0,
            )
        p_norm = math.sqrt(p_sq)
        s = int(np.argmin(dots))
        lower = float(dots[s]) / p_norm
        gap = p_norm - lower
        if gap < best_gap:
            best_gap, best_lower, best_upper = gap, lower, p_norm
        if gap <= tol:
            return OracleResult(
                gamma_d=p_norm,
                certificate=lam,
                iterations=it,
                tol_achieved=gap,
                converged=True,
                lower=lower,
                upper=p_norm,
            )

        # Toward-step: p <- (1-theta) p + theta y_s.
        d_sq_t = p_sq - 2.0 * float(dots[s]) + float(ds.row_sq[s])
        theta_t = 0.0
        if d_sq_t > 0.0:
            theta_t = min(max((p_sq - float(dots[s])) / d_sq_t, 0.0), 1.0)
        new_sq_t = (
            (1.0 - theta_t) ** 2 * p_sq
            + 2.0 * theta_t * (1.0 - theta_t) * float(dots[s])
            + theta_t * theta_t * float(ds.row_sq[s])
        )

        # Pairwise step: move weight theta from the worst support pattern v to s.
        support = np.nonzero(lam > 0.0)[0]
        v = int(support[np.argmax(dots[support])])
        new_sq_p = math.inf
        theta_p = 0.0
        if v != s:
            cross = _kernels.row_dot(ds.indptr, ds.indices, ds.values, s, v)
            d_sq_p = float(ds.row_sq[s]) + float(ds.row_sq[v]) - 2.0 * float(cross)
            if d_sq_p > 0.0:
                theta_p = min(max((float(dots[v]) - float(dots[s])) / d_sq_p, 0.0), float(lam[v]))
                new_sq_p = (
                    p_sq
                    + 2.0 * theta_p * (float(dots[s]) - float(dots[v]))
                    + theta_p * theta_p * d_sq_p
                )

        if new_sq_p < new_sq_t:
            lo_s, hi_s = ds.indptr[s], ds.indptr[s + 1]
            lo_v, hi_v = ds.indptr[v], ds.indptr[v + 1]
            p[ds.indices[lo_s:hi_s]] += theta_p * ds.values[lo_s:hi_s]
            p[ds.indices[lo_v:hi_v]] -= theta_p * ds.values[lo_v:hi_v]
            lam[s] += theta_p
            lam[v] = max(lam[v] - theta_p, 0.0)
        else:
            lam *= 1.0 - theta_t
            lam[s] += theta_t
            p *= 1.0 - theta_t
            lo_s, hi_s = ds.indptr[s], ds.indptr[s + 1]
            p[ds.indices[lo_s:hi_s]] += theta_t * ds.values[lo_s:hi_s]

    return OracleResult(
        gamma_d=best_upper,
        certificate=lam,
        iterations=iterations,
        tol_achieved=best_gap,
        converged=False,
        lower=best_lower,
        upper=best_upper,
    )


@dataclass(frozen=True)
class SandwichCheck:
    """Outcome of checking an achieved margin against the oracle's value."""

    passed: bool
    gamma_prime_d: float
    gamma_d: float
    epsilon: float
    tol: float
    failures: tuple[str, ...] = field(default_factory=tuple)


def verify_sandwich(run_report, oracle_result: OracleResult, epsilon: float, tol: float = 1e-8) -> SandwichCheck:
    """Check (1-eps)(gamma_d - tol) <= gamma_prime_d <= gamma_d + tol, plus
    consistency of the after-run estimate with the oracle's margin.

    ``run_report`` needs ``gamma_prime_d`` and ``after_run_estimate``
    attributes (a converged training report).  Returns structured detail
    rather than raising.
    """
    gamma_prime = run_report.gamma_prime_d
    gamma_d = oracle_result.gamma_d
    failures = []
    if gamma_prime is None:
        failures.append("no achieved margin (run not converged?)")
        gamma_prime = math.nan
    else:
        if gamma_prime < (1.0 - epsilon) * (gamma_d - tol):
            failures.append("lower bound violated")
        if gamma_prime > gamma_d + tol:
            failures.append("upper bound violated")
        estimate = getattr(run_report, "after_run_estimate", None)
        if estimate is not None and gamma_d > 0.0:
            true_gap = (gamma_d - gamma_prime) / gamma_d
            if estimate < true_gap - tol / gamma_d - 1e-12:
                failures.append("after-run estimate below the oracle gap")
    return SandwichCheck(
        passed=not failures,
        gamma_prime_d=gamma_prime,
        gamma_d=gamma_d,
        epsilon=epsilon,
        tol=tol,
        failures=tuple(failures),
    )
