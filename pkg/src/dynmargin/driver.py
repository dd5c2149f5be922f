"""Training orchestration: dynamic-margin runs, successive runs, fixed-margin runs.

The plain dynamic-margin trainer applies two warm-up tweaks during its very
first full-dataset pass (single updates only, and a level-1 multiplier
lowered to the level-2 value) to keep the weight vector from ballooning
while the running norm ratio is still coarse.  The successive-run variant
skips both tweaks: its early stages run at large accuracy parameters, which
achieves the same effect, and the weight state carries over from stage to
stage without reset.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import bounds, core
from .data import WorkingDataset
from .schedule import (
    DEFAULT_MAX_EPOCHS,
    ActiveSetConfig,
    MaxEpochsExceeded,
    UpdateTrace,
    run_until_convergence,
)

ALGORITHMS = ("pdm", "pdm_succ", "pfm")


@dataclass
class RunConfig:
    """Everything a training run needs besides the dataset."""

    algorithm: str = "pdm"
    epsilon: Optional[float] = None
    beta: Optional[float] = None
    eta: float = 8.0
    active_set: ActiveSetConfig = field(default_factory=ActiveSetConfig)
    multiple_updates: bool = True
    instrument: bool = False
    max_epochs: int = DEFAULT_MAX_EPOCHS

    def validate(self) -> None:
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        needs_eps = self.algorithm in ("pdm", "pdm_succ")
        if needs_eps and (self.epsilon is None or self.beta is not None):
            raise ValueError("pdm/pdm_succ take epsilon (and no beta)")
        if not needs_eps and (self.beta is None or self.epsilon is not None):
            raise ValueError("pfm takes beta (and no epsilon)")
        if self.eta <= 1.0:
            raise ValueError("eta must exceed 1")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be positive")


@dataclass(frozen=True)
class StageRecord:
    """One successive-run stage: its accuracy parameter, the cumulative
    update count when it converged, and the full epochs it consumed."""

    epsilon: float
    t_c: int
    epochs: int


@dataclass
class TrainReport:
    algorithm: str
    converged: bool
    t_c: int
    epochs: int
    norm_a: float
    gamma_prime_d: Optional[float] = None
    argmin_k: Optional[int] = None
    after_run_estimate: Optional[float] = None
    epsilon: Optional[float] = None
    beta: Optional[float] = None
    eta: Optional[float] = None
    stages: list[StageRecord] = field(default_factory=list)
    duration_s: float = 0.0
    eq6_max_residual: Optional[float] = None
    trace: Optional[UpdateTrace] = None


@dataclass
class ExperimentReport:
    """Paired run of a dynamic-margin trainer and the fixed-margin trainer
    at beta set to the margin the first one achieved."""

    pdm: TrainReport
    pfm: Optional[TrainReport]
    beta_used: Optional[float] = None

    @property
    def update_ratio(self) -> Optional[float]:
        if self.pfm is None or self.pfm.t_c == 0:
            return None
        return self.pdm.t_c / self.pfm.t_c


def stage_epsilons(epsilon_target: float, eta: float) -> list[float]:
    """Decreasing accuracy schedule 1/2, 1/(2 eta), ... clamped to end
    exactly at the target."""
    if not 0.0 < epsilon_target <= 0.5:
        raise ValueError("target accuracy must be in (0, 1/2]")
    if eta <= 1.0:
        raise ValueError("eta must exceed 1")
    seq = [0.5]
    while seq[-1] > epsilon_target:
        seq.append(max(seq[-1] / eta, epsilon_target))
    return seq


def _config_for(algorithm: str, cfg: Optional[RunConfig], **overrides) -> RunConfig:
    if cfg is None:
        cfg = RunConfig(algorithm=algorithm, **overrides)
    return cfg


def _finalize(state, ds, report):
    core.refresh_norm_sq(state, ds)
    report.norm_a = state.norm
    if state.t > 0 and state.norm_sq > 0.0:
        margin = core.evaluate_margin(state, ds)
        report.gamma_prime_d = margin.gamma_prime_d
        report.argmin_k = margin.argmin_k
        if report.converged and margin.gamma_prime_d > 0.0:
            report.after_run_estimate = bounds.after_run_estimate(
                margin.gamma_prime_d, state.t, state.norm
            )
    return report


def _expanded_steps(trace: UpdateTrace, chunk: int = 1 << 20):
    """Yield the trace's update events expanded into their equivalent single
    steps, in chunks of at most ``chunk`` steps.

    Each yielded tuple (t, s, a, q) holds pre-step scalars for one batch of
    single updates: the state reached after j < lam prior copies of the
    event's pattern.  Multiple updates are exact closed forms of their single
    replays, so the expansion reconstructs every intermediate state.
    """
    rows = trace.view()
    start = 0
    while start < rows.shape[0]:
        stop = start
        total = 0
        while stop < rows.shape[0]:
            lam = int(rows[stop, 4])
            if total and total + lam > chunk:
                break
            total += lam
            stop += 1
        batch = rows[start:stop]
        lam = batch[:, 4].astype(np.int64)
        rep = np.repeat(np.arange(batch.shape[0]), lam)
        j = np.arange(rep.size, dtype=np.float64) - np.repeat(
            np.cumsum(lam) - lam, lam
        )
        t0 = batch[rep, 0]
        s0 = batch[rep, 1]
        a0 = batch[rep, 2]
        q = batch[rep, 3]
        for lo in range(0, rep.size, chunk):
            hi = min(lo + chunk, rep.size)
            jj = j[lo:hi]
            t = t0[lo:hi] + jj
            s = s0[lo:hi] + 2.0 * jj * a0[lo:hi] + jj * jj * q[lo:hi]
            a = a0[lo:hi] + jj * q[lo:hi]
            yield t, s, a, q[lo:hi]
        start = stop


def eq6_max_residual(trace: UpdateTrace) -> float:
    """Largest normalized identity residual over every single update in the
    trace, expanding each multiple update into its equivalent single steps.

    Steps starting at t = 0 are skipped: the identity links two states with
    t > 0, and the run's first update has no predecessor ratio.
    """
    worst = 0.0
    for t, s, a, q in _expanded_steps(trace):
        mask = t > 0.0
        if not mask.any():
            continue
        t, s, a, q = t[mask], s[mask], a[mask], q[mask]
        t1 = t + 1.0
        s1 = s + 2.0 * a + q
        a1 = a + q
        lhs = s / (t * t) - s1 / (t1 * t1)
        rhs = ((s / t - a) + (s1 / t1 - a1)) / (t * t1)
        resid = np.abs(lhs - rhs) / np.maximum(1.0, np.abs(lhs))
        worst = max(worst, float(resid.max()))
    return worst


def monotone_violations(trace: UpdateTrace, t_threshold: float, rel_tol: float = 1e-12) -> int:
    """Count update steps at t >= t_threshold where the ratio ||a||/t grew by
    more than ``rel_tol`` relative; zero on a run obeying the late-stage
    monotone decrease of the running margin bound."""
    violations = 0
    for t, s, a, q in _expanded_steps(trace):
        mask = (t >= t_threshold) & (t > 0.0)
        if not mask.any():
            continue
        t, s, a, q = t[mask], s[mask], a[mask], q[mask]
        t1 = t + 1.0
        s1 = s + 2.0 * a + q
        ratio_before = np.sqrt(s) / t
        ratio_after = np.sqrt(s1) / t1
        violations += int((ratio_after > ratio_before * (1.0 + rel_tol)).sum())
    return violations


def _run_stage(state, ds, rule, cfg, *, epoch_offset=0, first_epoch_single=False,
               first_epoch_c1=None, trace=None) -> int:
    return run_until_convergence(
        state,
        ds,
        rule,
        None,
        cfg.active_set,
        max_epochs=cfg.max_epochs,
        epoch_offset=epoch_offset,
        first_epoch_single=first_epoch_single,
        first_epoch_c1=first_epoch_c1,
        trace=trace,
    )


def _with_retrying_trace(run, max_capacity: int = 1 << 24):
    """Run a deterministic training closure, growing the trace buffer and
    restarting from scratch if it overflows.

    ``run(trace)`` must return a tuple whose second element is the converged
    flag.  Unconverged runs are never retried (their event streams are
    unbounded), and growth stops at ``max_capacity`` rows; in both cases the
    truncated trace is returned with ``overflowed`` set.
    """
    capacity = 1 << 17
    while True:
        trace = UpdateTrace(capacity)
        result = run(trace)
        converged = result[1]
        if not trace.overflowed or not converged or capacity >= max_capacity:
            return result, trace
        capacity *= 4


def train_pdm(ds: WorkingDataset, epsilon: float, cfg: Optional[RunConfig] = None):
    """Train with the dynamic margin condition at accuracy ``epsilon``.

    Returns (state, report); a converged state satisfies
    gamma_prime_d > (1 - epsilon) * ||a|| / t_c.  Multiple updates are held
    back for the first full epoch, which also runs with the level-1
    multiplier lowered to the level-2 value.
    """
    cfg = _config_for("pdm", cfg, epsilon=epsilon)
    rule = core.DynamicMarginRule(epsilon, multiple=cfg.multiple_updates)

    def run(trace):
        state = core.zero_state(ds)
        started = time.perf_counter()
        converged, epochs = True, 0
        try:
            epochs = _run_stage(
                state,
                ds,
                rule,
                cfg,
                first_epoch_single=cfg.multiple_updates,
                first_epoch_c1=cfg.active_set.c2,
                trace=trace,
            )
        except MaxEpochsExceeded as stop:
            converged, epochs = False, stop.epochs
        duration = time.perf_counter() - started
        return state, converged, epochs, duration

    if cfg.instrument:
        (state, converged, epochs, duration), trace = _with_retrying_trace(run)
    else:
        state, converged, epochs, duration = run(None)
        trace = None

    report = TrainReport(
        algorithm="pdm",
        converged=converged,
        t_c=state.t,
        epochs=epochs,
        norm_a=state.norm,
        epsilon=epsilon,
        duration_s=duration,
        trace=trace,
    )
    if trace is not None:
        report.eq6_max_residual = eq6_max_residual(trace)
    return state, _finalize(state, ds, report)


def train_pdm_succ(
    ds: WorkingDataset, epsilon_target: float, eta: float = 8.0, cfg: Optional[RunConfig] = None
):
    """Successive dynamic-margin runs at accuracies 1/2, 1/(2 eta), ...,
    ending exactly at ``epsilon_target``; the weight state and update counter
    carry over across stages and multiple updates are on from the start."""
    cfg = _config_for("pdm_succ", cfg, epsilon=epsilon_target, eta=eta)
    epsilons = stage_epsilons(epsilon_target, eta)

    def run(trace):
        state = core.zero_state(ds)
        started = time.perf_counter()
        converged = True
        stages: list[StageRecord] = []
        epoch_offset = 0
        for eps_n in epsilons:
            rule = core.DynamicMarginRule(eps_n, multiple=cfg.multiple_updates)
            try:
                stage_epochs = _run_stage(
                    state, ds, rule, cfg, epoch_offset=epoch_offset, trace=trace
                )
            except MaxEpochsExceeded as stop:
                converged = False
                stages.append(StageRecord(eps_n, state.t, stop.epochs))
                epoch_offset += stop.epochs
                break
            stages.append(StageRecord(eps_n, state.t, stage_epochs))
            epoch_offset += stage_epochs
        duration = time.perf_counter() - started
        return state, converged, stages, epoch_offset, duration

    if cfg.instrument:
        (state, converged, stages, epochs, duration), trace = _with_retrying_trace(run)
    else:
        state, converged, stages, epochs, duration = run(None)
        trace = None

    report = TrainReport(
        algorithm="pdm_succ",
        converged=converged,
        t_c=state.t,
        epochs=epochs,
        norm_a=state.norm,
        epsilon=epsilon_target,
        eta=eta,
        stages=stages,
        duration_s=duration,
        trace=trace,
    )
    if trace is not None:
        report.eq6_max_residual = eq6_max_residual(trace)
    return state, _finalize(state, ds, report)


def train_pfm(ds: WorkingDataset, beta: float, cfg: Optional[RunConfig] = None):
    """Train with the fixed margin condition a.y <= beta * ||a||.

    Converges only when beta is below the dataset's maximum directional
    margin; otherwise the epoch guard trips and the report comes back with
    ``converged`` False.
    """
    cfg = _config_for("pfm", cfg, beta=beta)
    rule = core.FixedMarginRule(beta, multiple=cfg.multiple_updates)

    def run(trace):
        state = core.zero_state(ds)
        started = time.perf_counter()
        converged, epochs = True, 0
        try:
            epochs = _run_stage(state, ds, rule, cfg, trace=trace)
        except MaxEpochsExceeded as stop:
            converged, epochs = False, stop.epochs
        duration = time.perf_counter() - started
        return state, converged, epochs, duration

    if cfg.instrument:
        (state, converged, epochs, duration), trace = _with_retrying_trace(run)
    else:
        state, converged, epochs, duration = run(None)
        trace = None

    report = TrainReport(
        algorithm="pfm",
        converged=converged,
        t_c=state.t,
        epochs=epochs,
        norm_a=state.norm,
        beta=beta,
        duration_s=duration,
        trace=trace,
    )
    if trace is not None:
        report.eq6_max_residual = eq6_max_residual(trace)
    return state, _finalize(state, ds, report)


def train(ds: WorkingDataset, cfg: RunConfig):
    """Dispatch on cfg.algorithm."""
    cfg.validate()
    if cfg.algorithm == "pdm":
        return train_pdm(ds, cfg.epsilon, cfg)
    if cfg.algorithm == "pdm_succ":
        return train_pdm_succ(ds, cfg.epsilon, cfg.eta, cfg)
    return train_pfm(ds, cfg.beta, cfg)


def experiment_pdm_vs_pfm(
    ds: WorkingDataset,
    epsilon: float,
    variant: str = "plain",
    cfg: Optional[RunConfig] = None,
) -> ExperimentReport:
    """Run the dynamic-margin trainer, then the fixed-margin trainer with
    beta set to the directional margin the first one achieved."""
    if variant not in ("plain", "succ"):
        raise ValueError("variant must be 'plain' or 'succ'")
    if variant == "plain":
        pdm_cfg = _config_for("pdm", cfg, epsilon=epsilon)
        _, pdm_report = train_pdm(ds, epsilon, pdm_cfg)
    else:
        pdm_cfg = _config_for("pdm_succ", cfg, epsilon=epsilon)
        _, pdm_report = train_pdm_succ(ds, epsilon, pdm_cfg.eta, pdm_cfg)
    if not pdm_report.converged or not pdm_report.gamma_prime_d:
        return ExperimentReport(pdm=pdm_report, pfm=None)
    beta = pdm_report.gamma_prime_d
    pfm_cfg = RunConfig(
        algorithm="pfm",
        beta=beta,
        active_set=pdm_cfg.active_set,
        multiple_updates=pdm_cfg.multiple_updates,
        instrument=pdm_cfg.instrument,
        max_epochs=pdm_cfg.max_epochs,
    )
    _, pfm_report = train_pfm(ds, beta, pfm_cfg)
    return ExperimentReport(pdm=pdm_report, pfm=pfm_report, beta_used=beta)
