"""Synthetic-data study harness: generation, baselines, error metrics.

Every study is a pure function of its configuration.  Per-run generators are
seeded by scrambling the base seed with the run index, so runs can execute
in any order or in parallel and still reproduce bit-identically.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .covariance import StructuredCovariance, ar1_block, build_sigma, ensure_pd
from .errors import DimensionError, ParameterError, ValidityError
from .mixed import (
    Design,
    FitOptions,
    FitResult,
    FixedEffects,
    assemble_design,
    fit_iterative,
    gls_loop,
    gls_update,
    pack_fixed_effects,
    predict_outcomes,
)
from .model import ModelSpec
from .pca import empirical_pca, fpca_flat, pre_residualize
from .precision import PenaltyPolicy

METHODS = ("proposed", "no_regularization", "no_random_effects")
EIGENVALUE_FLOOR = 1e-5
FIXED_GROUPS = ("alpha_g", "alpha_f", "beta")


def splitmix64(value: int) -> int:
    """One scramble step of the splitmix64 sequence."""
    value = (value + 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
    value = ((value ^ (value >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    value = ((value ^ (value >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    return value ^ (value >> 31)


def run_seed(base_seed: int, run_index: int) -> int:
    """Independent per-run stream seed: splitmix of base XOR run index.

    The base is scrambled before the XOR so that nearby base seeds do not
    share their stream sets across run indices.
    """
    return splitmix64(splitmix64(base_seed & 0xFFFFFFFFFFFFFFFF) ^ run_index)


@dataclass(frozen=True)
class TruthParams:
    """Generating fixed effects and random-effect covariance."""

    alpha_g: np.ndarray  # (pu, kg)
    alpha_f: np.ndarray  # (pu, kf)
    beta: np.ndarray     # (pw, kf)
    covariance: StructuredCovariance

    def packed(self, spec: ModelSpec) -> FixedEffects:
        return pack_fixed_effects(self.alpha_g, self.alpha_f, self.beta, spec)

    def total_sigma(self, spec: ModelSpec) -> np.ndarray:
        """Identifiable outcome covariance (random effects plus noise)."""
        return build_sigma(self.covariance, spec)


@dataclass(frozen=True)
class PcChainConfig:
    """Dimensions of the synthetic momenta/field stage for estimated projections."""

    momenta_points: int = 40   # d control points, 3d momenta columns
    field_dim: int = 60
    noise: float = 0.5


@dataclass(frozen=True)
class StudyConfig:
    spec: ModelSpec
    runs: int
    seed: int
    truth: TruthParams
    methods: tuple = METHODS
    fit_options: FitOptions = field(default_factory=FitOptions)
    estimated_pcs: bool = False
    pc_chain: PcChainConfig = field(default_factory=PcChainConfig)

    def __post_init__(self):
        if self.runs < 1:
            raise ParameterError("runs must be at least 1")
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ParameterError(f"unknown methods: {sorted(unknown)}")
        s, truth = self.spec, self.truth
        if truth.alpha_g.shape != (s.pu, s.kg) or truth.alpha_f.shape != (s.pu, s.kf):
            raise DimensionError("truth fixed effects do not match the model spec")
        if np.asarray(truth.beta).reshape(-1).shape != (s.pw * s.kf,):
            raise DimensionError("truth beta does not match the model spec")
        cov = truth.covariance
        if (cov.kg, cov.kf, cov.t) != (s.kg, s.kf, s.t):
            raise DimensionError("truth covariance blocks do not match the model spec")


def benchmark_truth(t: int = 5) -> TruthParams:
    """Built-in benchmark generating parameters (per-component
    variances 25..1 and 30..1, AR(1) temporal blocks, noise sd 0.5).

    Each functional component couples only with the geometric component of
    the same index (disjoint supports, so the linked structure stays
    sparse).  The cross row splits its energy between the smoothest and
    roughest temporal eigendirections, which keeps the cross covariance
    significantly nonzero in both slow and fast contrasts while the
    assembled matrix stays well conditioned.
    """
    kg = kf = 5
    rho = 0.5
    gg = np.array([25.0, 16.0, 9.0, 4.0, 1.0])
    fvar = np.array([30.0, 20.0, 10.0, 5.0, 1.0])
    sigma_ff = np.stack([ar1_block(v, rho, t) for v in fvar])
    sigma_gf = np.zeros((kf, kg, t))
    share = 0.45  # per-direction explained fraction; total must stay below 1
    for k in range(kf):
        eigval, eigvec = np.linalg.eigh(sigma_ff[k])
        smooth = np.sqrt(eigval[-1]) * eigvec[:, -1] * np.sign(eigvec[:, -1].sum())
        rough = np.sqrt(eigval[0]) * eigvec[:, 0] * np.sign(eigvec[0, 0])
        sigma_gf[k, k, :] = np.sqrt(gg[k] * share) * (smooth + rough)
    covariance = StructuredCovariance(
        sigma_gg=gg, sigma_ff=sigma_ff, sigma_gf=sigma_gf, sigma_eps2=0.25
    )
    alpha_g = np.array([[1.0, 0.0, 0.5, 0.2, 1.5],
                        [0.0, 1.0, 0.5, 0.6, 0.5]])
    alpha_f = np.array([[1.0, 1.0, 0.5, 1.5, 0.5],
                        [0.5, 1.0, 0.0, 0.0, 1.0]])
    beta = np.array([[0.0, 1.0, 1.0, 0.0, 0.5],
                     [0.5, 1.5, 0.5, -0.3, -0.7]])
    return TruthParams(alpha_g=alpha_g, alpha_f=alpha_f, beta=beta, covariance=covariance)


def benchmark_study(t: int = 5, runs: int = 20, seed: int = 20250, n: int = 200,
                   methods: tuple = METHODS, **kwargs) -> StudyConfig:
    """Built-in benchmark study configuration."""
    spec = ModelSpec(kg=5, kf=5, t=t, pu=2, pw=2, n=n)
    return StudyConfig(spec=spec, runs=runs, seed=seed, truth=benchmark_truth(t),
                       methods=methods, **kwargs)


def boxcar_stimuli(t: int, pw: int, n: int) -> np.ndarray:
    """Deterministic on/off block stimuli shared by all subjects.

    Blocks span ``max(1, t // 5)`` times; each successive signal is phase
    shifted by one block.  Rows stack subjects fastest.
    """
    block = max(1, t // 5)
    w = np.empty((n * t, pw))
    for j in range(pw):
        signal = ((np.arange(t) // block + j) % 2 == 0).astype(float)
        w[:, j] = np.repeat(signal, n)
    return w


def draw_random_effects(covariance: StructuredCovariance, spec: ModelSpec,
                        n: int, rng: np.random.Generator) -> np.ndarray:
    """Sample n rows from the centered random-effect distribution."""
    sigma_gamma = build_sigma(covariance.without_noise(), spec)
    chol = np.linalg.cholesky(sigma_gamma)
    return rng.standard_normal((n, spec.p)) @ chol.T


@dataclass(frozen=True)
class SimulatedDataset:
    u: np.ndarray
    w: np.ndarray
    outcomes: np.ndarray
    truth: TruthParams
    spec: ModelSpec
    run_index: int
    momenta: np.ndarray | None = None
    fields: np.ndarray | None = None
    basis_g: np.ndarray | None = None
    basis_f: np.ndarray | None = None


def _orthonormal(rows: int, cols: int, rng: np.random.Generator) -> np.ndarray:
    q, _ = np.linalg.qr(rng.standard_normal((rows, cols)))
    return q[:, :cols]


def generate_dataset(config: StudyConfig, run_index: int) -> SimulatedDataset:
    """Generate one run: covariates, stimuli, random effects, outcomes.

    Covariate columns alternate between Gaussian (mean 3, variance 3) and
    shifted Student-t with 3 degrees of freedom; stimuli are the deterministic
    boxcar signals.  Identical ``(seed, run_index)`` pairs reproduce the
    dataset bit for bit.
    """
    if not 0 <= run_index < config.runs:
        raise ParameterError(f"run_index {run_index} out of range")
    spec = config.spec
    rng = np.random.default_rng(run_seed(config.seed, run_index))
    u = np.empty((spec.n, spec.pu))
    for col in range(spec.pu):
        if col % 2 == 0:
            u[:, col] = rng.normal(3.0, np.sqrt(3.0), size=spec.n)
        else:
            u[:, col] = rng.standard_t(3, size=spec.n) + 3.0
    w = boxcar_stimuli(spec.t, spec.pw, spec.n)
    try:
        gamma = draw_random_effects(config.truth.covariance, spec, spec.n, rng)
    except np.linalg.LinAlgError:
        raise ValidityError("truth covariance is not positive definite") from None
    eps = rng.standard_normal((spec.n, spec.p)) * np.sqrt(config.truth.covariance.sigma_eps2)
    design = assemble_design(u, w, spec)
    fixed = predict_outcomes(design, config.truth.packed(spec))
    outcomes = fixed + gamma + eps

    momenta = fields = basis_g = basis_f = None
    if config.estimated_pcs:
        chain = config.pc_chain
        basis_rng = np.random.default_rng(splitmix64(config.seed ^ 0xB0A5E5))
        basis_g = _orthonormal(3 * chain.momenta_points, spec.kg, basis_rng)
        basis_f = _orthonormal(chain.field_dim, spec.kf, basis_rng)
        a_g = outcomes[:, : spec.kg]
        momenta = a_g @ basis_g.T + chain.noise * rng.standard_normal(
            (spec.n, 3 * chain.momenta_points)
        )
        scores_f = np.empty((spec.n * spec.t, spec.kf))
        for k in range(spec.kf):
            block = outcomes[:, spec.func_block(k)]  # (n, t)
            scores_f[:, k] = block.T.ravel()          # subject fastest within time
        fields = scores_f @ basis_f.T + chain.noise * rng.standard_normal(
            (spec.n * spec.t, chain.field_dim)
        )
    return SimulatedDataset(
        u=u, w=w, outcomes=outcomes, truth=config.truth, spec=spec,
        run_index=run_index, momenta=momenta, fields=fields,
        basis_g=basis_g, basis_f=basis_f,
    )


def estimate_projections(dataset: SimulatedDataset) -> np.ndarray:
    """Recover outcome projections from the synthetic momenta and fields.

    Components are estimated on pre-residualized data, sign-aligned to the
    generating bases (the orientation is unidentified in a blind
    decomposition), and the raw data are projected onto them.
    """
    spec = dataset.spec
    if dataset.momenta is None or dataset.fields is None:
        raise ValidityError("dataset was generated without the estimated-projection stage")
    basis = empirical_pca(pre_residualize(dataset.momenta, dataset.u), spec.kg)
    comps_g = basis.components * np.sign(
        np.einsum("dk,dk->k", basis.components, dataset.basis_g)
    )
    a_g = dataset.momenta @ comps_g

    u_t = np.tile(dataset.u, (spec.t, 1))
    covs = np.hstack([u_t, dataset.w]) if spec.pw else u_t
    basis_f = fpca_flat(pre_residualize(dataset.fields, covs), spec.kf)
    comps_f = basis_f.components * np.sign(
        np.einsum("dk,dk->k", basis_f.components, dataset.basis_f)
    )
    scores = dataset.fields @ comps_f  # (n * t, kf), subject fastest
    outcomes = np.empty((spec.n, spec.p))
    outcomes[:, : spec.kg] = a_g
    for k in range(spec.kf):
        outcomes[:, spec.func_block(k)] = scores[:, k].reshape(spec.t, spec.n).T
    return outcomes


def _truncated_covariance_update(residuals: np.ndarray):
    """Empirical second-moment update with the eigenvalue floor."""
    sigma = ensure_pd(residuals.T @ residuals / residuals.shape[0], EIGENVALUE_FLOOR)
    return sigma, np.linalg.inv(sigma)


def fit_method(method: str, outcomes: np.ndarray, design: Design,
               options: FitOptions) -> FitResult:
    """Fit one estimation method on a prepared design."""
    spec = design.spec
    if method == "proposed":
        return fit_iterative(outcomes, design, spec, PenaltyPolicy.target_sparsity(),
                             options)
    if method == "no_regularization":
        if spec.n > spec.p:
            return fit_iterative(outcomes, design, spec, PenaltyPolicy.fixed_lambda(0.0),
                                 options)
        return gls_loop(outcomes, design, _truncated_covariance_update, options)
    if method == "no_random_effects":
        b = gls_update(design, np.eye(spec.p), outcomes)
        eye = np.eye(spec.p)
        return FitResult(b_hat=b, sigma_hat=eye, sigma_inv_hat=eye, iterations=1,
                         trace=np.zeros((0, 2)), converged=True)
    raise ParameterError(f"unknown method {method!r}")


def fit_baselines(dataset: SimulatedDataset, spec: ModelSpec,
                  which=METHODS, options: FitOptions | None = None) -> dict:
    """Fit the requested methods on a simulated dataset."""
    design = assemble_design(dataset.u, dataset.w, spec)
    options = options or FitOptions()
    return {m: fit_method(m, dataset.outcomes, design, options) for m in which}


@dataclass(frozen=True)
class RunErrors:
    """Per-run squared errors of one fitted method."""

    fixed_sqerr: dict            # group -> squared errors per coefficient
    cov_sqerr: np.ndarray        # (p, p)


def evaluate_run(fit: FitResult, truth: TruthParams, spec: ModelSpec) -> RunErrors:
    """Squared estimation errors against the generating parameters."""
    fixed = {
        "alpha_g": (fit.b_hat.alpha_g() - truth.alpha_g).ravel() ** 2,
        "alpha_f": (fit.b_hat.alpha_f() - truth.alpha_f).ravel() ** 2,
        "beta": (fit.b_hat.beta() - np.asarray(truth.beta, dtype=float)
                 .reshape(spec.pw, spec.kf)).ravel() ** 2,
    }
    cov_sqerr = (fit.sigma_hat - truth.total_sigma(spec)) ** 2
    return RunErrors(fixed_sqerr=fixed, cov_sqerr=cov_sqerr)


@dataclass(frozen=True)
class MethodMetrics:
    """Aggregated study metrics for one method on one outcome source."""

    fixed_rmse: dict                  # group -> scalar RMSE over runs x coefficients
    fixed_rmse_per_run: dict          # group -> (runs,) per-run RMSE
    cov_rmse: np.ndarray              # (p, p) element-wise RMSE over runs
    seconds: np.ndarray               # (runs,) wall-clock fit time
    iterations: np.ndarray
    converged: np.ndarray


@dataclass(frozen=True)
class MetricsReport:
    spec: ModelSpec
    runs: int
    seed: int
    methods: dict                     # method -> MethodMetrics (actual projections)
    estimated: dict | None            # same, on estimated projections
    failures: tuple                   # (run, source, method, message)
    conditioning: np.ndarray          # (runs, 2): cond(U), cond([U_T, W])


def _aggregate(spec: ModelSpec, runs: int, rows: dict) -> dict:
    methods = {}
    for method, entries in rows.items():
        groups = {g: [] for g in FIXED_GROUPS}
        cov = np.full((runs, spec.p, spec.p), np.nan)
        seconds = np.full(runs, np.nan)
        iters = np.zeros(runs, dtype=int)
        conv = np.zeros(runs, dtype=bool)
        per_run = {g: np.full(runs, np.nan) for g in FIXED_GROUPS}
        for run, errors, elapsed, fit in entries:
            for g in FIXED_GROUPS:
                groups[g].append(errors.fixed_sqerr[g])
                if errors.fixed_sqerr[g].size:
                    per_run[g][run] = float(np.sqrt(errors.fixed_sqerr[g].mean()))
            cov[run] = errors.cov_sqerr
            seconds[run] = elapsed
            iters[run] = fit.iterations
            conv[run] = fit.converged
        fixed_rmse = {}
        for g in FIXED_GROUPS:
            pooled = np.concatenate(groups[g]) if groups[g] else np.zeros(0)
            fixed_rmse[g] = float(np.sqrt(pooled.mean())) if pooled.size else float("nan")
        cov_rmse = np.sqrt(np.nanmean(cov, axis=0)) if np.isfinite(cov).any() \
            else np.full((spec.p, spec.p), np.nan)
        methods[method] = MethodMetrics(
            fixed_rmse=fixed_rmse,
            fixed_rmse_per_run=per_run,
            cov_rmse=cov_rmse,
            seconds=seconds,
            iterations=iters,
            converged=conv,
        )
    return methods


def run_study(config: StudyConfig, threads: int = 1) -> MetricsReport:
    """Execute all runs and aggregate the error metrics.

    Per-run failures are recorded (run, source, method, message) and leave
    the remaining runs untouched.  Runs execute independently, optionally on
    a thread pool; results are gathered by run index so the thread count
    never changes the report.
    """
    spec = config.spec
    sources = ["actual"] + (["estimated"] if config.estimated_pcs else [])
    rows = {src: {m: [] for m in config.methods} for src in sources}
    failures = []
    conditioning = np.full((config.runs, 2), np.nan)

    def one_run(run: int):
        out = []
        dataset = generate_dataset(config, run)
        design = assemble_design(dataset.u, dataset.w, spec)
        uw = np.hstack([np.tile(dataset.u, (spec.t, 1)), dataset.w])
        conds = (float(np.linalg.cond(dataset.u)), float(np.linalg.cond(uw)))
        for source in sources:
            try:
                outcomes = (dataset.outcomes if source == "actual"
                            else estimate_projections(dataset))
            except Exception as exc:  # noqa: BLE001 - recorded per run
                out.append((source, None, None, None, None, repr(exc)))
                continue
            for method in config.methods:
                try:
                    start = time.perf_counter()
                    fit = fit_method(method, outcomes, design, config.fit_options)
                    elapsed = time.perf_counter() - start
                    errors = evaluate_run(fit, config.truth, spec)
                    out.append((source, method, errors, elapsed, fit, None))
                except Exception as exc:  # noqa: BLE001 - recorded per run
                    out.append((source, method, None, None, None, repr(exc)))
        return conds, out

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one_run, range(config.runs)))
    else:
        results = [one_run(run) for run in range(config.runs)]

    for run, (conds, entries) in enumerate(results):
        conditioning[run] = conds
        for source, method, errors, elapsed, fit, message in entries:
            if message is not None:
                failures.append((run, source, method, message))
            else:
                rows[source][method].append((run, errors, elapsed, fit))

    return MetricsReport(
        spec=spec,
        runs=config.runs,
        seed=config.seed,
        methods=_aggregate(spec, config.runs, rows["actual"]),
        estimated=_aggregate(spec, config.runs, rows["estimated"])
        if config.estimated_pcs else None,
        failures=tuple(failures),
        conditioning=conditioning,
    )
