"""Command-line front end: train, experiment, predict.

Exit codes: 0 success, 2 parse/config error, 3 non-convergence, 4 I/O error.
Reports are flat JSON documents (scalars and arrays only, no nesting) with
floats at full precision; models use the plain-text format of
:mod:`dynmargin.model`.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from typing import Optional

import numpy as np

from . import bounds, data, driver, model, oracle
from .schedule import ActiveSetConfig

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NONCONVERGENCE = 3
EXIT_IO = 4

ORACLE_SIZE_LIMIT = 100_000


class ConfigError(RuntimeError):
    """Config-level failure discovered after argument parsing."""


_ALGO_NAMES = {"pdm": "pdm", "pdm-succ": "pdm_succ", "pfm": "pfm"}


def _add_common_flags(p: argparse.ArgumentParser, with_beta: bool = True) -> None:
    p.add_argument("--data", required=True, help="sparse text dataset ('-' for stdin)")
    p.add_argument("--epsilon", type=float, help="target accuracy in (0, 1]")
    if with_beta:
        p.add_argument("--beta", type=float, help="fixed margin threshold (pfm only)")
    p.add_argument("--delta", type=float, default=1.0, help="slack-extension magnitude")
    p.add_argument("--rho", type=float, default=1.0, help="bias augmentation coordinate")
    p.add_argument("--eta", type=float, default=8.0, help="successive-run accuracy step")
    p.add_argument("--scale", type=float, default=1.0, help="feature rescale factor")
    p.add_argument("--seed", type=int, default=0, help="permutation seed")
    p.add_argument("--max-epochs", type=int, default=1_000_000)
    p.add_argument("--positive-label", type=float, default=None,
                   help="treat exactly this raw label as +1, everything else as -1")
    p.add_argument("--c1", type=float, default=2.2, help="level-1 active-set multiplier")
    p.add_argument("--c2", type=float, default=1.1, help="level-2 active-set multiplier")
    p.add_argument("--nep1", type=int, default=9, help="level-1 rounds")
    p.add_argument("--nep2", type=int, default=12, help="level-2 rounds")
    p.add_argument("--nep3", type=int, default=12, help="level-3 rounds")
    p.add_argument("--no-multiple-updates", action="store_true",
                   help="apply one update per presentation")
    p.add_argument("--instrument-eq6", action="store_true",
                   help="record update events and report the identity residual")
    p.add_argument("--oracle", action="store_true",
                   help="also compute the exact margin (small datasets only)")
    p.add_argument("--out-report", default=None, help="write the JSON report here")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dynmargin",
        description="Approximate maximum-margin training with perceptron updates.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train one model")
    p_train.add_argument("--algo", required=True, choices=sorted(_ALGO_NAMES))
    _add_common_flags(p_train)
    p_train.add_argument("--out-model", default=None, help="write the model file here")

    p_exp = sub.add_parser(
        "experiment",
        help="train with the dynamic condition, then rerun fixed at the achieved margin",
    )
    p_exp.add_argument("--algo", required=True, choices=["pdm", "pdm-succ"])
    _add_common_flags(p_exp, with_beta=False)
    p_exp.add_argument("--out-report-pdm", default=None)
    p_exp.add_argument("--out-report-pfm", default=None)

    p_pred = sub.add_parser("predict", help="classify instances with a trained model")
    p_pred.add_argument("--model", required=True)
    p_pred.add_argument("--data", required=True, help="instances ('-' for stdin); labels optional")
    return parser


def _build_config(args, algorithm: str) -> driver.RunConfig:
    active = ActiveSetConfig(
        c1=args.c1, c2=args.c2, n_ep1=args.nep1, n_ep2=args.nep2, n_ep3=args.nep3,
        seed=args.seed,
    )
    return driver.RunConfig(
        algorithm=algorithm,
        epsilon=args.epsilon,
        beta=getattr(args, "beta", None),
        eta=args.eta,
        active_set=active,
        multiple_updates=not args.no_multiple_updates,
        instrument=args.instrument_eq6,
        max_epochs=args.max_epochs,
    )


def _load_working(args) -> data.WorkingDataset:
    patterns = data.load_dataset(args.data, args.positive_label)
    if not patterns:
        raise data.ParseError(0, "dataset contains no instances")
    return data.build_working(patterns, delta=args.delta, rho=args.rho, scale=args.scale)


def _report_dict(report: driver.TrainReport, ds: data.WorkingDataset, seed: int) -> dict:
    out = {
        "algorithm": report.algorithm,
        "converged": report.converged,
        "t_c": report.t_c,
        "epochs": report.epochs,
        "gamma_prime_d": report.gamma_prime_d,
        "argmin_k": report.argmin_k,
        "norm_a": report.norm_a,
        "after_run_estimate": report.after_run_estimate,
        "epsilon": report.epsilon,
        "beta": report.beta,
        "eta": report.eta,
        "duration_s": report.duration_s,
        "m": ds.m,
        "explicit_dim": ds.explicit_dim,
        "R": ds.R,
        "delta": ds.delta,
        "rho": ds.rho,
        "scale": ds.scale,
        "seed": seed,
    }
    if report.stages:
        out["stage_epsilons"] = [s.epsilon for s in report.stages]
        out["stage_updates"] = [s.t_c for s in report.stages]
        out["stage_epochs"] = [s.epochs for s in report.stages]
    if report.eq6_max_residual is not None:
        out["eq6_max_residual"] = report.eq6_max_residual
    return out


def _attach_oracle(out: dict, report: driver.TrainReport, ds: data.WorkingDataset,
                   epsilon: Optional[float]) -> None:
    if ds.m > ORACLE_SIZE_LIMIT:
        raise ConfigError(f"--oracle refuses datasets with m > {ORACLE_SIZE_LIMIT}")
    result = oracle.gilbert_gamma_d(ds)
    out["gamma_d_oracle"] = result.gamma_d
    out["oracle_gap"] = result.tol_achieved
    out["oracle_iterations"] = result.iterations
    out["oracle_converged"] = result.converged
    gamma = result.gamma_d
    if epsilon is not None and report.converged:
        check = oracle.verify_sandwich(report, result, epsilon)
        out["sandwich_passed"] = check.passed
        out["sandwich_failures"] = list(check.failures)
    if gamma > 0.0 and ds.R >= gamma:
        eps_for_bounds = epsilon if epsilon is not None else (
            1.0 - report.beta / gamma if report.beta is not None and report.beta < gamma else None
        )
        if eps_for_bounds is not None and 0.0 < eps_for_bounds <= 1.0:
            t2 = bounds.theorem2_bound(eps_for_bounds, ds.R, gamma)
            out["theorem1_bound"] = bounds.theorem1_bound(eps_for_bounds, ds.R, gamma)
            out["theorem2_t0"] = t2.loose_t0
            out["theorem2_bound"] = t2.bound
    if ds.delta > 0.0:
        out["margin_floor"] = data.margin_floor(ds.delta, ds.m)



def _write_json(payload: dict, path: Optional[str]) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True)
    if path is None:
        print(text)
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")


def _cmd_train(args) -> int:
    algorithm = _ALGO_NAMES[args.algo]
    cfg = _build_config(args, algorithm)
    cfg.validate()
    if algorithm == "pdm_succ" and not 0.0 < args.epsilon <= 0.5:
        raise ConfigError("pdm-succ needs epsilon in (0, 1/2]")
    ds = _load_working(args)
    state, report = driver.train(ds, cfg)
    out = _report_dict(report, ds, args.seed)
    if args.oracle:
        _attach_oracle(out, report, ds, report.epsilon)
    _write_json(out, args.out_report)
    if args.out_model:
        m = model.ModelFile(
            explicit_dim=ds.explicit_dim,
            rho=ds.rho,
            delta=ds.delta,
            scale=ds.scale,
            weights=state.w_explicit,
            t_c=state.t,
            algorithm=algorithm,
            seed=args.seed,
            gamma_prime_d=report.gamma_prime_d,
            epsilon=report.epsilon,
            beta=report.beta,
        )
        model.save_model(m, args.out_model)
    return EXIT_OK if report.converged else EXIT_NONCONVERGENCE


def _cmd_experiment(args) -> int:
    algorithm = _ALGO_NAMES[args.algo]
    variant = "succ" if algorithm == "pdm_succ" else "plain"
    if args.epsilon is None:
        raise ConfigError("experiment needs --epsilon")
    cfg = _build_config(args, algorithm)
    cfg.validate()
    ds = _load_working(args)
    result = driver.experiment_pdm_vs_pfm(ds, args.epsilon, variant, cfg)
    combined: dict = {"variant": variant}
    for key, value in _report_dict(result.pdm, ds, args.seed).items():
        combined[f"pdm_{key}"] = value
    if result.pfm is not None:
        for key, value in _report_dict(result.pfm, ds, args.seed).items():
            combined[f"pfm_{key}"] = value
        combined["cmp_beta_used"] = result.beta_used
        combined["cmp_update_ratio"] = result.update_ratio
        if result.pfm.gamma_prime_d is not None and result.pdm.gamma_prime_d is not None:
            combined["cmp_margin_gain"] = result.pfm.gamma_prime_d - result.pdm.gamma_prime_d
    if args.oracle:
        _attach_oracle(combined, result.pdm, ds, args.epsilon)
    _write_json(combined, args.out_report)
    if args.out_report_pdm:
        _write_json(_report_dict(result.pdm, ds, args.seed), args.out_report_pdm)
    if args.out_report_pfm and result.pfm is not None:
        _write_json(_report_dict(result.pfm, ds, args.seed), args.out_report_pfm)
    ok = result.pdm.converged and result.pfm is not None and result.pfm.converged
    return EXIT_OK if ok else EXIT_NONCONVERGENCE


def _parse_instance_line(tokens: list[str], line_no: int) -> data.SparsePattern:
    idxs: list[int] = []
    vals: list[float] = []
    prev = 0
    for tok in tokens:
        name, sep, val_s = tok.partition(":")
        if not sep:
            raise data.ParseError(line_no, f"malformed token {tok!r}")
        try:
            idx = int(name)
            val = float(val_s)
        except ValueError:
            raise data.ParseError(line_no, f"malformed token {tok!r}") from None
        if not 1 <= idx <= data.MAX_FEATURE_INDEX or idx <= prev:
            raise data.ParseError(line_no, f"bad index in {tok!r}")
        if not math.isfinite(val):
            raise data.ParseError(line_no, f"non-finite value in {tok!r}")
        prev = idx
        idxs.append(idx - 1)
        vals.append(val)
    return data.SparsePattern(np.array(idxs, np.int32), np.array(vals), 1)


def _iter_instances(lines):
    """Yield (pattern, raw_label or None); lines whose first token contains a
    colon are treated as unlabeled."""
    for line_no, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tokens = line.split()
        label: Optional[float] = None
        feats = tokens
        if ":" not in tokens[0]:
            try:
                label = float(tokens[0])
            except ValueError:
                raise data.ParseError(line_no, f"invalid label {tokens[0]!r}") from None
            feats = tokens[1:]
        yield _parse_instance_line(feats, line_no), label


def _cmd_predict(args) -> int:
    m = model.load_model(args.model)
    errors = 0
    labeled = 0

    def run(lines) -> None:
        nonlocal errors, labeled
        for pattern, raw_label in _iter_instances(lines):
            pred = m.predict(pattern)
            print(f"{pred:+d}")
            if raw_label is not None:
                labeled += 1
                truth = 1 if raw_label > 0 else -1
                if pred != truth:
                    errors += 1

    if args.data == "-":
        run(sys.stdin)
    else:
        with open(args.data, "r", encoding="utf-8") as fh:
            run(fh)
    if labeled:
        print(f"error_rate {errors / labeled!r} ({errors}/{labeled})", file=sys.stderr)
    return EXIT_OK


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_CONFIG
    try:
        if args.command == "train":
            return _cmd_train(args)
        if args.command == "experiment":
            return _cmd_experiment(args)
        return _cmd_predict(args)
    except (data.ParseError, ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
