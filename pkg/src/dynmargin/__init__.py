"""Approximate maximum-margin linear classifiers built on perceptron updates.

The trainer drives the classical additive update with one of two
misclassification conditions: a fixed normalized margin target, or a
"dynamic" target set to a fraction of the running upper bound ||a||/t on
the maximum directional margin.  The package also ships the matching
closed-form convergence-bound calculators and an independent hull-distance
oracle for verifying achieved margins.
"""

from .bounds import (
    BoundInputs,
    Theorem2Result,
    after_run_estimate,
    dynamic_loose_t0,
    lemma1_t0,
    succ_ratio_bound,
    theorem1_bound,
    theorem2_bound,
)
from .core import (
    DynamicMarginRule,
    FixedMarginRule,
    MarginReport,
    WeightState,
    apply_multiple,
    dot,
    dynamic_condition,
    eq6_residual,
    evaluate_margin,
    fixed_condition,
    multiple_update_count_dynamic,
    multiple_update_count_fixed,
    refresh_norm_sq,
    single_update,
    zero_state,
)
from .data import (
    ParseError,
    SparsePattern,
    WorkingDataset,
    build_working,
    load_dataset,
    margin_floor,
    parse_dataset,
    working_from_rows,
)
from .driver import (
    ExperimentReport,
    RunConfig,
    StageRecord,
    TrainReport,
    experiment_pdm_vs_pfm,
    stage_epsilons,
    train,
    train_pdm,
    train_pdm_succ,
    train_pfm,
)
from .model import ModelFile, load_model, save_model
from .oracle import OracleResult, SandwichCheck, gilbert_gamma_d, verify_sandwich
from .schedule import (
    ActiveSetConfig,
    MaxEpochsExceeded,
    UpdateTrace,
    permute,
    run_until_convergence,
)

__version__ = "0.1.0"

__all__ = [
    "ActiveSetConfig",
    "BoundInputs",
    "DynamicMarginRule",
    "ExperimentReport",
    "FixedMarginRule",
    "MarginReport",
    "MaxEpochsExceeded",
    "ModelFile",
    "OracleResult",
    "ParseError",
    "RunConfig",
    "SandwichCheck",
    "SparsePattern",
    "StageRecord",
    "Theorem2Result",
    "TrainReport",
    "UpdateTrace",
    "WeightState",
    "WorkingDataset",
    "after_run_estimate",
    "apply_multiple",
    "build_working",
    "dot",
    "dynamic_condition",
    "dynamic_loose_t0",
    "eq6_residual",
    "evaluate_margin",
    "experiment_pdm_vs_pfm",
    "fixed_condition",
    "gilbert_gamma_d",
    "lemma1_t0",
    "load_dataset",
    "load_model",
    "margin_floor",
    "multiple_update_count_dynamic",
    "multiple_update_count_fixed",
    "parse_dataset",
    "permute",
    "refresh_norm_sq",
    "run_until_convergence",
    "save_model",
    "single_update",
    "stage_epsilons",
    "succ_ratio_bound",
    "theorem1_bound",
    "theorem2_bound",
    "train",
    "train_pdm",
    "train_pdm_succ",
    "train_pfm",
    "verify_sandwich",
    "working_from_rows",
    "zero_state",
]
