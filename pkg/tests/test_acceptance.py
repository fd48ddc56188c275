"""End-to-end acceptance checks.

Each test prints one PASS/FAIL line (run with ``pytest -s`` to see them) and
asserts the stated tolerance.
"""

import json
import time

import numpy as np
import pytest
from scipy.linalg import subspace_angles

from structmix import (
    CouplingPattern,
    ModelSpec,
    PenaltyPolicy,
    StructuredCovariance,
    TruthParams,
    benchmark_study,
    benchmark_truth,
    assemble_design,
    build_sigma,
    dense_cholesky_precision,
    empirical_pca,
    estimate_precision,
    fit_iterative,
    fpca_flat,
    generate_dataset,
    gls_update,
    kl_divergence,
    lambda_for_target,
    lasso_row,
    predicted_zero_pattern,
    random_coupled_covariance,
    run_study,
    verify_zero_pattern,
    wald_tests,
)
from structmix.cli import run_config
from structmix.fileio import matrix_csv_bytes
from structmix.simulate import fit_method


def report(criterion: str, ok: bool, detail: str):
    print(f"{'PASS' if ok else 'FAIL'} {criterion}: {detail}")
    assert ok, f"{criterion}: {detail}"


@pytest.fixture(scope="module")
def t5_study():
    config = benchmark_study(t=5, runs=20, seed=20250)
    return config, run_study(config)


def disjoint_supports(spec, rng):
    order = rng.permutation(spec.kg)
    supports = [set() for _ in range(spec.kf)]
    for idx, g in enumerate(order):
        supports[idx % spec.kf].add(int(g))
    return tuple(frozenset(s) for s in supports)


def test_criterion_1_forced_zero_pattern():
    rng = np.random.default_rng(101)
    start = time.perf_counter()
    worst = 0.0
    checked = 0
    for _ in range(100):
        spec = ModelSpec(kg=int(rng.integers(1, 6)), kf=int(rng.integers(1, 6)),
                         t=int(rng.integers(1, 5)), pu=1, pw=0, n=1)
        supports = disjoint_supports(spec, rng)
        pattern = CouplingPattern(spec=spec, gf_support=supports)
        sigma = random_coupled_covariance(spec, supports, rng)
        zeta = dense_cholesky_precision(build_sigma(sigma, spec)).zeta
        mask = predicted_zero_pattern(pattern)
        if mask.any():
            violation = float(np.abs(zeta[mask]).max())
            scale = float(np.abs(zeta).max())
            worst = max(worst, violation / scale if scale else 0.0)
            checked += 1
        assert verify_zero_pattern(sigma, pattern, tol=1e-9).ok
    elapsed = time.perf_counter() - start
    ok = worst < 1e-9 and elapsed < 10.0 and checked > 50
    report("criterion 1 (forced-zero pattern)", ok,
           f"worst relative violation {worst:.2e} over {checked} masked instances "
           f"in {elapsed:.1f}s")


def test_criterion_2_factorization_oracles():
    rng = np.random.default_rng(102)
    worst_recon = 0.0
    worst_match = 0.0
    for _ in range(50):
        p = int(rng.integers(2, 41))
        a = rng.standard_normal((p, p))
        sigma = a @ a.T + p * np.eye(p)
        factors = dense_cholesky_precision(sigma)
        worst_recon = max(worst_recon, float(np.abs(factors.sigma() - sigma).max()))

        n = 3 * p + 20
        spec = ModelSpec(kg=p, kf=1, t=1, pu=1, pw=0, n=n)
        resid = rng.standard_normal((n, p + 1)) @ np.linalg.cholesky(
            np.pad(sigma, ((0, 1), (0, 1))) + np.diag(np.r_[np.zeros(p), 1.0])).T
        est = estimate_precision(resid, spec, PenaltyPolicy.fixed_lambda(0.0))
        dense = dense_cholesky_precision(resid.T @ resid / n)
        support = np.array([len(s) for s in est.support])
        aligned = est.factors.d * (n - support) / n
        worst_match = max(
            worst_match,
            float(np.abs(est.factors.zeta - dense.zeta).max()),
            float(np.abs(aligned - dense.d).max()),
        )
    ok = worst_recon < 1e-10 and worst_match < 1e-8
    report("criterion 2 (factorization oracles)", ok,
           f"reconstruction {worst_recon:.2e}, lambda=0 vs dense {worst_match:.2e}")


def test_criterion_3_precision_recovery():
    truth = benchmark_truth(5)
    spec = ModelSpec(kg=5, kf=5, t=5, pu=2, pw=2, n=2000)
    sigma = build_sigma(truth.covariance, spec)
    chol = np.linalg.cholesky(sigma)
    errors = []
    for seed in range(10):
        rng = np.random.default_rng(seed)
        resid = rng.standard_normal((2000, spec.p)) @ chol.T
        est = estimate_precision(resid, spec, PenaltyPolicy.target_sparsity())
        errors.append(np.linalg.norm(est.sigma_hat - sigma) / np.linalg.norm(sigma))
    mean_err = float(np.mean(errors))
    report("criterion 3 (precision recovery)", mean_err <= 0.15,
           f"mean relative Frobenius error {mean_err:.4f} over 10 seeds")


def test_criterion_4_study_ordering(t5_study):
    config, rep = t5_study
    med = {m: float(np.median(rep.methods[m].cov_rmse)) for m in rep.methods}
    rmse = {m: rep.methods[m].fixed_rmse for m in rep.methods}
    max_fit_seconds = float(np.nanmax(rep.methods["proposed"].seconds))
    ok_a = med["proposed"] <= med["no_regularization"]
    ok_b = (rmse["proposed"]["alpha_f"] <= rmse["no_random_effects"]["alpha_f"]
            and rmse["proposed"]["beta"] <= rmse["no_random_effects"]["beta"])
    ok_time = max_fit_seconds <= 60.0
    ok = ok_a and ok_b and ok_time and not rep.failures
    report("criterion 4 (study ordering)", ok,
           f"median cov RMSE {med['proposed']:.3f} vs {med['no_regularization']:.3f}; "
           f"alpha_f {rmse['proposed']['alpha_f']:.3f} vs "
           f"{rmse['no_random_effects']['alpha_f']:.3f}; "
           f"beta {rmse['proposed']['beta']:.3f} vs "
           f"{rmse['no_random_effects']['beta']:.3f}; "
           f"max proposed fit {max_fit_seconds:.1f}s")


def test_criterion_5_large_t_feasibility():
    config = benchmark_study(t=50, runs=1, seed=20250)
    assert config.spec.p == 255
    dataset = generate_dataset(config, 0)
    design = assemble_design(dataset.u, dataset.w, config.spec)
    start = time.perf_counter()
    fit = fit_method("proposed", dataset.outcomes, design, config.fit_options)
    proposed_seconds = time.perf_counter() - start
    baseline = fit_method("no_regularization", dataset.outcomes, design,
                          config.fit_options)
    min_eig = float(np.linalg.eigvalsh(baseline.sigma_hat)[0])
    ok = (proposed_seconds <= 600.0 and fit.sigma_hat.shape == (255, 255)
          and min_eig >= 1e-5 * (1 - 1e-6))
    report("criterion 5 (large-T feasibility)", ok,
           f"proposed fit {proposed_seconds:.1f}s; truncated baseline min "
           f"eigenvalue {min_eig:.2e}")


def test_criterion_6_gls_identity_and_kl():
    rng = np.random.default_rng(106)
    spec = ModelSpec(kg=2, kf=2, t=2, pu=2, pw=1, n=30)
    u = rng.standard_normal((spec.n, spec.pu))
    w = rng.standard_normal((spec.n * spec.t, spec.pw))
    design = assemble_design(u, w, spec)
    outcomes = rng.standard_normal((spec.n, spec.p))
    b = gls_update(design, np.eye(spec.p), outcomes)
    ols = np.zeros(spec.n_coef)
    for g in range(spec.kg + spec.kf):
        cols = [j for j in range(spec.p) if spec.col_group(j) == g]
        x = np.vstack([design.col_design(j) for j in cols])
        y = np.concatenate([outcomes[:, j] for j in cols])
        ols[spec.coef_slice(g)] = np.linalg.lstsq(x, y, rcond=None)[0]
    gls_gap = float(np.abs(b.values - ols).max())

    min_kl = np.inf
    for _ in range(1000):
        p = int(rng.integers(1, 7))
        a1 = rng.standard_normal((p, p))
        a2 = rng.standard_normal((p, p))
        min_kl = min(min_kl, kl_divergence(a1 @ a1.T + p * np.eye(p),
                                           a2 @ a2.T + p * np.eye(p)))
    sigma = np.eye(4) + 0.25
    ok = gls_gap < 1e-10 and kl_divergence(sigma, sigma) == 0.0 and min_kl >= 0.0
    report("criterion 6 (GLS/OLS identity, KL properties)", ok,
           f"identity-weight gap {gls_gap:.2e}; min KL over 1000 pairs {min_kl:.2e}")


def test_criterion_7_lasso_closed_forms():
    rng = np.random.default_rng(107)
    q, _ = np.linalg.qr(rng.standard_normal((60, 4)))
    x = q[:, :3]
    y = x @ np.array([3.0, 2.0, 1.0]) + q[:, 3]
    y += x @ (np.array([3.0, 2.0, 1.0]) - x.T @ y)  # pin inner products exactly
    r = np.hstack([x, y[:, None]])
    worst = 0.0
    for lam in (0.4, 1.0, 2.2, 3.6):
        closed = np.sign(x.T @ y) * np.maximum(np.abs(x.T @ y) - lam / 2.0, 0.0)
        worst = max(worst, float(np.abs(lasso_row(r, 3, lam) - closed).max()))
    zeroed = lasso_row(r, 3, 2.0 * float(np.abs(x.T @ y).max()) * 1.0001)
    lam_target, beta = lambda_for_target(r, 3, 2)
    ok = (worst < 1e-10 and not zeroed.any()
          and set(np.flatnonzero(beta)) == {0, 1} and 2.0 < lam_target < 4.0)
    report("criterion 7 (lasso closed forms)", ok,
           f"soft-threshold gap {worst:.2e}; target support "
           f"{sorted(np.flatnonzero(beta))} at lambda {lam_target:.3f}")


def test_criterion_8_wald_calibration():
    spec = ModelSpec(kg=1, kf=1, t=1, pu=2, pw=0, n=100)
    cov = StructuredCovariance(sigma_gg=[2.0], sigma_ff=[[[3.0]]],
                               sigma_gf=[[[0.8]]], sigma_eps2=0.25)
    truth = TruthParams(alpha_g=np.array([[1.0], [0.0]]),  # second covariate null
                        alpha_f=np.array([[0.5], [1.0]]),
                        beta=np.zeros((0, 1)), covariance=cov)
    from structmix import StudyConfig

    config = StudyConfig(spec=spec, runs=2000, seed=42, truth=truth,
                         methods=("no_regularization",))
    rejections = 0
    for run in range(2000):
        dataset = generate_dataset(config, run)
        design = assemble_design(dataset.u, dataset.w, spec)
        fit = fit_iterative(dataset.outcomes, design, spec,
                            PenaltyPolicy.fixed_lambda(0.0))
        rejections += wald_tests(fit, design).p[1] < 0.05
    rate = rejections / 2000
    report("criterion 8 (Wald calibration)", 0.03 <= rate <= 0.07,
           f"empirical type-I error {rate:.4f} at nominal 0.05")


def test_criterion_9_pca_recovery():
    rng = np.random.default_rng(109)
    basis_true, _ = np.linalg.qr(rng.standard_normal((30, 5)))
    data = (rng.standard_normal((400, 5)) * 10.0) @ basis_true.T \
        + rng.standard_normal((400, 30))
    angles = subspace_angles(empirical_pca(data, 5).components, basis_true)
    max_angle = float(np.degrees(angles.max()))

    flat = (rng.standard_normal((90, 3)) * 8.0) @ np.linalg.qr(
        rng.standard_normal((12, 3)))[0].T + rng.standard_normal((90, 12))
    basis = fpca_flat(flat, 3)
    centered = flat - flat.mean(axis=0)
    worst = 0.0
    residual = centered.copy()
    for i in range(3):
        comp = residual[0] / np.linalg.norm(residual[0])
        for _ in range(5000):
            comp_new = residual.T @ (residual @ comp)
            comp_new /= np.linalg.norm(comp_new)
            if np.abs(np.abs(comp_new) - np.abs(comp)).max() < 1e-15:
                comp = comp_new
                break
            comp = comp_new
        peak = np.argmax(np.abs(comp))
        if comp[peak] < 0:
            comp = -comp
        worst = max(worst, float(np.abs(comp - basis.components[:, i]).max()))
        scores = residual @ comp
        residual = residual - np.outer(scores, comp)
    ok = max_angle < 5.0 and worst < 1e-8
    report("criterion 9 (PCA recovery)", ok,
           f"max principal angle {max_angle:.2f} deg; deflation gap {worst:.2e}")


def test_criterion_10_byte_identical_reports(tmp_path):
    study = {
        "command": "simulate",
        "study": {"spec": {"kg": 5, "kf": 5, "t": 3, "pu": 2, "pw": 2, "n": 80},
                  "runs": 3, "seed": 77, "truth": "benchmark",
                  "methods": ["proposed", "no_random_effects"]},
    }
    study_path = tmp_path / "study.json"
    study_path.write_text(json.dumps(study))
    outs = [tmp_path / f"study_out{i}" for i in range(3)]
    for out, threads in zip(outs, (1, 2, 4)):
        assert run_config(study_path, out_dir=out, threads=threads) == 0

    config = benchmark_study(t=3, runs=1, seed=5, n=60, methods=("proposed",))
    dataset = generate_dataset(config, 0)
    (tmp_path / "u.csv").write_bytes(matrix_csv_bytes(dataset.u))
    (tmp_path / "w.csv").write_bytes(matrix_csv_bytes(dataset.w))
    (tmp_path / "a.csv").write_bytes(matrix_csv_bytes(dataset.outcomes))
    fit_doc = {"command": "fit",
               "fit": {"spec": {"kg": 5, "kf": 5, "t": 3, "pu": 2, "pw": 2, "n": 60},
                       "data": {"u": "u.csv", "w": "w.csv", "outcomes": "a.csv"}}}
    fit_path = tmp_path / "fit.json"
    fit_path.write_text(json.dumps(fit_doc))
    fit_outs = [tmp_path / f"fit_out{i}" for i in range(2)]
    for out in fit_outs:
        assert run_config(fit_path, out_dir=out) == 0

    mismatches = []
    for out in outs[1:]:
        for path in sorted(outs[0].iterdir()):
            if path.name == "runs.csv":  # the only timing-bearing artifact
                continue
            if (out / path.name).read_bytes() != path.read_bytes():
                mismatches.append(f"study:{path.name}")
    for path in sorted(fit_outs[0].iterdir()):
        if (fit_outs[1] / path.name).read_bytes() != path.read_bytes():
            mismatches.append(f"fit:{path.name}")
    n_files = len(list(outs[0].iterdir())) + len(list(fit_outs[0].iterdir()))
    report("criterion 10 (byte-identical reports)", not mismatches,
           f"{n_files} files compared across thread counts 1/2/4; "
           f"mismatches: {mismatches or 'none'}")
