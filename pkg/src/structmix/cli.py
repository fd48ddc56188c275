"""Configuration-driven batch front door.

Usage: ``structmix <command> --config <path> [--out <dir>] [--threads N]
[--seed S]`` with commands ``simulate``, ``fit``, ``verify``, ``pca``.  The
``STRUCTMIX_LOG`` environment variable (error/warn/info/debug) controls log
verbosity.  Exit codes: 0 success, 1 configuration or input-validity error,
2 numerical or convergence failure.  Outputs are staged in full before any
file is written, so failures leave no partial artifacts.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from .errors import (
    ConfigError,
    DegenerateColumnError,
    DimensionError,
    IdentifiabilityError,
    OverfitError,
    ParameterError,
    StructmixError,
    ValidityError,
)
from .fileio import commit_outputs, covariance_from_json, read_matrix_csv, read_momenta_csv
from .mixed import FitOptions, assemble_design, fit_iterative, wald_tests
from .model import ModelSpec
from .pca import empirical_pca, fpca_flat, pre_residualize
from .precision import PenaltyPolicy
from .report import (
    VerificationBatch,
    fit_report_files,
    metrics_report_files,
    pca_report_files,
    verification_report_files,
)
from .simulate import METHODS, StudyConfig, TruthParams, benchmark_truth, run_study, splitmix64
from .sparsity import CouplingPattern, random_coupled_covariance, verify_zero_pattern

log = logging.getLogger("structmix")

_LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING,
               "info": logging.INFO, "debug": logging.DEBUG}


def _require(doc: dict, field: str, context: str = ""):
    if field not in doc:
        raise ConfigError("missing required entry", field=f"{context}{field}")
    return doc[field]


def _parse_spec(doc: dict, context: str) -> ModelSpec:
    kwargs = {}
    for name in ("kg", "kf", "t", "pu", "pw", "n"):
        kwargs[name] = int(_require(doc, name, context))
    try:
        return ModelSpec(**kwargs)
    except ParameterError as exc:
        raise ConfigError(str(exc), field=context.rstrip(".")) from None


def _parse_policy(value) -> PenaltyPolicy:
    if value is None or value == "target_sparsity":
        return PenaltyPolicy.target_sparsity()
    if isinstance(value, str):
        if value == "cross_validation":
            return PenaltyPolicy.cross_validation()
        raise ConfigError(f"unknown policy {value!r}", field="fit_options.policy")
    mode = _require(value, "mode", "fit_options.policy.")
    if mode == "target_sparsity":
        tau = value.get("tau")
        return PenaltyPolicy.target_sparsity(tau=tau)
    if mode == "fixed_lambda":
        return PenaltyPolicy.fixed_lambda(float(_require(value, "lambda",
                                                         "fit_options.policy.")))
    if mode == "cross_validation":
        return PenaltyPolicy.cross_validation(int(value.get("folds", 5)))
    raise ConfigError(f"unknown policy mode {mode!r}", field="fit_options.policy.mode")


def _parse_fit_options(doc: dict | None) -> tuple[FitOptions, PenaltyPolicy]:
    doc = doc or {}
    options = FitOptions(
        c_b=float(doc.get("c_b", 1e-6)),
        c_sigma=float(doc.get("c_sigma", 1e-6)),
        n_iter=int(doc.get("n_iter", 100)),
    )
    return options, _parse_policy(doc.get("policy"))


def _parse_truth(value, spec: ModelSpec) -> TruthParams:
    if value is None or value == "benchmark":
        if (spec.kg, spec.kf, spec.pu, spec.pw) != (5, 5, 2, 2):
            raise ConfigError(
                "the benchmark truth requires kg=kf=5, pu=pw=2", field="study.truth")
        return benchmark_truth(spec.t)
    for name in ("alpha_g", "alpha_f", "beta", "covariance"):
        _require(value, name, "study.truth.")
    return TruthParams(
        alpha_g=np.asarray(value["alpha_g"], dtype=float),
        alpha_f=np.asarray(value["alpha_f"], dtype=float),
        beta=np.asarray(value["beta"], dtype=float),
        covariance=covariance_from_json(value["covariance"]),
    )


def _cmd_simulate(doc: dict, base: Path, threads: int, seed_override: int | None,
                  figures: bool) -> dict:
    study = _require(doc, "study")
    spec = _parse_spec(_require(study, "spec", "study."), "study.spec.")
    options, _ = _parse_fit_options(study.get("fit_options"))
    seed = int(study.get("seed", 0)) if seed_override is None else seed_override
    methods = tuple(study.get("methods", list(METHODS)))
    config = StudyConfig(
        spec=spec,
        runs=int(_require(study, "runs", "study.")),
        seed=seed,
        truth=_parse_truth(study.get("truth"), spec),
        methods=methods,
        fit_options=options,
        estimated_pcs=bool(study.get("estimated_pcs", False)),
    )
    log.info("study: %d runs, seed %d, methods %s", config.runs, config.seed, methods)
    report = run_study(config, threads=threads)
    return metrics_report_files(report, figures=figures)


def _cmd_fit(doc: dict, base: Path, threads: int, seed_override: int | None,
             figures: bool) -> dict:
    fit_doc = _require(doc, "fit")
    spec = _parse_spec(_require(fit_doc, "spec", "fit."), "fit.spec.")
    data = _require(fit_doc, "data", "fit.")
    u = read_matrix_csv(base / _require(data, "u", "fit.data."))
    outcomes = read_matrix_csv(base / _require(data, "outcomes", "fit.data."))
    w = read_matrix_csv(base / data["w"]) if data.get("w") else None
    options, policy = _parse_fit_options(fit_doc.get("fit_options"))
    design = assemble_design(u, w, spec)
    started = time.perf_counter()
    fit = fit_iterative(outcomes, design, spec, policy, options)
    log.info("fit finished in %.2fs (%d iterations, converged=%s)",
             time.perf_counter() - started, fit.iterations, fit.converged)
    wald = wald_tests(fit, design)
    return fit_report_files(fit, wald, spec, figures=figures)


def _cmd_verify(doc: dict, base: Path, threads: int, seed_override: int | None,
                figures: bool) -> dict:
    verify = _require(doc, "verify")
    instances = int(verify.get("instances", 100))
    tol = float(verify.get("tol", 1e-9))
    seed = int(verify.get("seed", 0)) if seed_override is None else seed_override
    max_kg = int(verify.get("max_kg", 5))
    max_kf = int(verify.get("max_kf", 5))
    max_t = int(verify.get("max_t", 4))
    fixed_spec = verify.get("spec")
    fixed_pattern = verify.get("pattern")
    results = []
    for i in range(instances):
        rng = np.random.default_rng(splitmix64(seed ^ i))
        if fixed_spec is not None:
            dims = {k: int(fixed_spec[k]) for k in ("kg", "kf", "t")}
        else:
            dims = {"kg": int(rng.integers(1, max_kg + 1)),
                    "kf": int(rng.integers(1, max_kf + 1)),
                    "t": int(rng.integers(1, max_t + 1))}
        spec = ModelSpec(kg=dims["kg"], kf=dims["kf"], t=dims["t"], pu=1, pw=0, n=1)
        if fixed_pattern is not None:
            supports = tuple(frozenset(int(g) - 1 for g in s) for s in fixed_pattern)
        else:
            supports = disjoint_supports(spec, rng)
        pattern = CouplingPattern(spec=spec, gf_support=supports)
        sigma = random_coupled_covariance(spec, supports, rng)
        results.append((dims, verify_zero_pattern(sigma, pattern, tol=tol)))
    return verification_report_files(VerificationBatch(instances=tuple(results), tol=tol))


def disjoint_supports(spec: ModelSpec, rng: np.random.Generator) -> tuple:
    """Random pairwise-disjoint geometric supports, one set per functional component."""
    order = rng.permutation(spec.kg)
    supports = [set() for _ in range(spec.kf)]
    for idx, g in enumerate(order):
        if rng.random() < 0.8:
            supports[idx % spec.kf].add(int(g))
    return tuple(frozenset(s) for s in supports)


def _cmd_pca(doc: dict, base: Path, threads: int, seed_override: int | None,
             figures: bool) -> dict:
    pca_doc = _require(doc, "pca")
    mode = _require(pca_doc, "mode", "pca.")
    if mode not in ("momenta", "functional"):
        raise ConfigError(f"unknown pca mode {mode!r}", field="pca.mode")
    path = base / _require(pca_doc, "data", "pca.")
    data = read_momenta_csv(path) if mode == "momenta" else read_matrix_csv(path)
    if pca_doc.get("covariates"):
        covariates = read_matrix_csv(base / pca_doc["covariates"])
        data = pre_residualize(data, covariates)
    k = int(_require(pca_doc, "k", "pca."))
    basis = empirical_pca(data, k) if mode == "momenta" else fpca_flat(data, k)
    return pca_report_files(basis, mode, figures=figures)


_COMMANDS = {"simulate": _cmd_simulate, "fit": _cmd_fit,
             "verify": _cmd_verify, "pca": _cmd_pca}


def run_config(config_path, out_dir=None, threads: int | None = None,
               seed: int | None = None, figures: bool = True) -> int:
    """Load a JSON run configuration, dispatch, and commit all outputs.

    Returns the process exit status; outputs land in ``out_dir`` (default:
    ``out`` next to the configuration file).
    """
    path = Path(config_path)
    try:
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        command = _require(doc, "command")
        if command not in _COMMANDS:
            raise ConfigError(f"unknown command {command!r}", field="command")
        threads = threads if threads is not None else int(doc.get("threads", 1))
        if threads < 1:
            raise ConfigError("threads must be at least 1", field="threads")
        out = Path(out_dir) if out_dir else (
            Path(doc["out"]) if doc.get("out") else path.parent / "out")
        files = _COMMANDS[command](doc, path.parent, threads, seed, figures)
    except (DegenerateColumnError, OverfitError, IdentifiabilityError) as exc:
        log.error("numerical failure: %s", exc)
        return 2
    except (ConfigError, DimensionError, ParameterError, ValidityError) as exc:
        log.error("invalid configuration: %s", exc)
        return 1
    except (np.linalg.LinAlgError, StructmixError) as exc:
        log.error("numerical failure: %s", exc)
        return 2
    written = commit_outputs(out, files)
    log.info("wrote %d files to %s", len(written), out)
    return 0


def main(argv=None) -> int:
    level = _LOG_LEVELS.get(os.environ.get("STRUCTMIX_LOG", "warn"), logging.WARNING)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    parser = argparse.ArgumentParser(
        prog="structmix",
        description="Batch simulate/fit/verify/pca workflows from JSON configurations.",
    )
    parser.add_argument("command", choices=sorted(_COMMANDS))
    parser.add_argument("--config", required=True, help="path to the JSON run configuration")
    parser.add_argument("--out", default=None, help="output directory")
    parser.add_argument("--threads", type=int, default=None, help="worker cap")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--no-figures", action="store_true",
                        help="skip figure rendering on the report path")
    args = parser.parse_args(argv)

    config_path = Path(args.config)
    if config_path.exists():
        try:
            declared = json.loads(config_path.read_text()).get("command")
        except (json.JSONDecodeError, AttributeError):
            declared = None
        if declared is not None and declared != args.command:
            log.error("config declares command %r but %r was requested",
                      declared, args.command)
            return 1
    return run_config(config_path, out_dir=args.out, threads=args.threads,
                      seed=args.seed, figures=not args.no_figures)


if __name__ == "__main__":
    sys.exit(main())
