"""Report assembly: deterministic JSON/CSV artifacts plus rendered figures.

``report.json`` and the CSVs are byte-identical across reruns of the same
configuration; wall-clock timings and per-run diagnostics live in
``runs.csv``, the one artifact allowed to differ between invocations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import plots
from .fileio import csv_bytes, json_bytes, matrix_csv_bytes
from .mixed import FitResult, WaldReport
from .model import ModelSpec
from .precision import CholeskyEstimate
from .simulate import FIXED_GROUPS, MetricsReport
from .sparsity import ZeroPatternReport


@dataclass(frozen=True)
class VerificationBatch:
    """A batch of zero-pattern verifications: (dims dict, result) pairs."""

    instances: tuple
    tol: float


def _spec_doc(spec: ModelSpec) -> dict:
    return {"kg": spec.kg, "kf": spec.kf, "t": spec.t,
            "pu": spec.pu, "pw": spec.pw, "n": spec.n}


def _method_doc(metrics) -> dict:
    grid = metrics.cov_rmse
    finite = grid[np.isfinite(grid)]
    return {
        "fixed_rmse": metrics.fixed_rmse,
        "fixed_rmse_per_run": {g: metrics.fixed_rmse_per_run[g] for g in FIXED_GROUPS},
        "cov_rmse_median": float(np.median(finite)) if finite.size else None,
        "cov_rmse_mean": float(np.mean(finite)) if finite.size else None,
        "cov_rmse_max": float(np.max(finite)) if finite.size else None,
        "iterations": metrics.iterations,
        "converged": metrics.converged,
    }


def metrics_report_files(report: MetricsReport, figures: bool = True) -> dict:
    """Artifact bytes for a study report.

    ``cov_rmse.csv`` carries the grid of the first method; every method also
    gets its own ``cov_rmse_<method>.csv``.
    """
    methods = list(report.methods)
    doc = {
        "kind": "study",
        "spec": _spec_doc(report.spec),
        "runs": report.runs,
        "seed": report.seed,
        "methods": {m: _method_doc(report.methods[m]) for m in methods},
        "estimated": ({m: _method_doc(report.estimated[m]) for m in report.estimated}
                      if report.estimated is not None else None),
        "failures": [list(f) for f in report.failures],
    }
    files = {"report.json": json_bytes(doc)}
    if not methods:
        return files

    sources = {"actual": report.methods}
    if report.estimated is not None:
        sources["estimated"] = report.estimated
    rows = []
    run_rows = []
    for source, table in sources.items():
        for m in methods:
            metrics = table[m]
            for g in FIXED_GROUPS:
                rows.append((m, source, g, metrics.fixed_rmse[g]))
                for run, value in enumerate(metrics.fixed_rmse_per_run[g]):
                    run_rows.append((m, source, g, run, value))
    files["fixed_rmse.csv"] = csv_bytes(
        ["method", "outcomes", "effect_group", "rmse"], rows)
    files["fixed_rmse_runs.csv"] = csv_bytes(
        ["method", "outcomes", "effect_group", "run", "rmse"], run_rows)

    if methods:
        files["cov_rmse.csv"] = matrix_csv_bytes(report.methods[methods[0]].cov_rmse)
    for m in methods:
        files[f"cov_rmse_{m}.csv"] = matrix_csv_bytes(report.methods[m].cov_rmse)

    timing_rows = []
    for source, table in sources.items():
        for m in methods:
            metrics = table[m]
            for run in range(report.runs):
                timing_rows.append((
                    run, source, m, metrics.seconds[run], metrics.iterations[run],
                    metrics.converged[run], report.conditioning[run, 0],
                    report.conditioning[run, 1],
                ))
    files["runs.csv"] = csv_bytes(
        ["run", "outcomes", "method", "seconds", "iterations", "converged",
         "cond_u", "cond_uw"], timing_rows)

    if figures and methods:
        files["fixed_rmse.png"] = plots.fixed_rmse_boxplot(
            {m: report.methods[m].fixed_rmse_per_run for m in methods},
            FIXED_GROUPS, "fixed-effect RMSE by method")
        files["cov_rmse.png"] = plots.covariance_heatmaps(
            {m: report.methods[m].cov_rmse for m in methods},
            "element-wise covariance RMSE")
    return files


def wald_csv_bytes(report: WaldReport) -> bytes:
    rows = [
        (group, pc, cov, report.estimate[i], report.se[i], report.z[i], report.p[i])
        for i, (group, pc, cov) in enumerate(report.labels)
    ]
    return csv_bytes(
        ["group", "pc_index", "covariate_index", "estimate", "se", "z", "p"], rows)


def cholesky_estimate_files(est: CholeskyEstimate) -> dict:
    """CSV/JSON exports of the estimated factors (support rows are 1-based)."""
    support = [{"row": j + 1, "cols": [c + 1 for c in cols]}
               for j, cols in enumerate(est.support)]
    return {
        "l_hat.csv": matrix_csv_bytes(est.factors.l),
        "d_hat.csv": matrix_csv_bytes(est.factors.d[None, :]),
        "sigma_hat.csv": matrix_csv_bytes(est.sigma_hat),
        "support.json": json_bytes({"support": support}),
    }


def _wald_doc(report: WaldReport) -> dict:
    return {
        "labels": [list(label) for label in report.labels],
        "estimate": report.estimate,
        "se": report.se,
        "z": report.z,
        "p": report.p,
    }


def fit_report_files(fit: FitResult, wald: WaldReport, spec: ModelSpec,
                     figures: bool = True) -> dict:
    doc = {
        "kind": "fit",
        "spec": _spec_doc(spec),
        "b_hat": fit.b_hat.values,
        "iterations": fit.iterations,
        "converged": fit.converged,
        "trace": fit.trace,
        "wald": _wald_doc(wald),
    }
    files = {
        "report.json": json_bytes(doc),
        "wald.csv": wald_csv_bytes(wald),
        "sigma_hat.csv": matrix_csv_bytes(fit.sigma_hat),
        "sigma_inv_hat.csv": matrix_csv_bytes(fit.sigma_inv_hat),
    }
    if fit.cholesky is not None:
        files.update(cholesky_estimate_files(fit.cholesky))
    if figures:
        files["sigma_hat.png"] = plots.matrix_heatmap(fit.sigma_hat, "estimated covariance")
        if fit.trace.size:
            files["trace.png"] = plots.convergence_trace(fit.trace, "fit convergence")
    return files


def verification_report_files(batch: VerificationBatch) -> dict:
    """Artifacts for a batch of zero-pattern verifications."""
    instances = batch.instances
    ok_count = sum(1 for _, rep in instances if rep.ok)
    worst = max(instances, key=lambda item: item[1].max_violation)[1] if instances else None
    doc = {
        "kind": "verification",
        "instances": len(instances),
        "ok_count": ok_count,
        "tol": batch.tol,
        "worst_violation": worst.max_violation if worst else None,
        "worst_witness": list(worst.witness) if worst and worst.witness else None,
    }
    rows = [
        (i, dims["kg"], dims["kf"], dims["t"], rep.max_violation, rep.ok)
        for i, (dims, rep) in enumerate(instances)
    ]
    return {
        "report.json": json_bytes(doc),
        "verify_instances.csv": csv_bytes(
            ["instance", "kg", "kf", "t", "max_violation", "ok"], rows),
    }


def pca_report_files(basis, kind: str, figures: bool = True) -> dict:
    doc = {
        "kind": f"pca_{kind}",
        "k": basis.k,
        "explained": basis.explained,
    }
    files = {
        "report.json": json_bytes(doc),
        "components.csv": matrix_csv_bytes(basis.components),
        "scores.csv": matrix_csv_bytes(basis.scores),
    }
    if figures:
        files["scree.png"] = plots.scree_plot(basis.explained, "explained variance shares")
    return files


def export_report(report, out_dir, figures: bool = True) -> list:
    """Write a report's artifacts under ``out_dir`` and return the paths.

    Dispatches on the report type; identical reports export byte-identical
    files (timing-only artifacts aside).
    """
    from .fileio import commit_outputs

    if isinstance(report, MetricsReport):
        files = metrics_report_files(report, figures=figures)
    elif isinstance(report, WaldReport):
        files = {"wald.csv": wald_csv_bytes(report),
                 "report.json": json_bytes({"kind": "wald", **_wald_doc(report)})}
    elif isinstance(report, VerificationBatch):
        files = verification_report_files(report)
    elif isinstance(report, ZeroPatternReport):
        batch = VerificationBatch(instances=(({"kg": 0, "kf": 0, "t": 0}, report),),
                                  tol=0.0)
        files = verification_report_files(batch)
    else:
        raise TypeError(f"cannot export report of type {type(report).__name__}")
    return commit_outputs(out_dir, files)
