"""Block design assembly, generalized least squares, and Wald inference.

The stacked outcome vector orders the N x p outcome matrix column by column,
so its covariance is ``Sigma (x) I_N``.  All normal-equation algebra runs
blockwise on the small per-column designs (U for geometric columns,
[U, W_tau] for functional columns); the Np x Np weight matrix and the full
design are never materialized.
"""

from __future__ import annotations

import dataclasses
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.stats import norm

from .covariance import kl_divergence
from .errors import ConvergenceWarning, DimensionError, IdentifiabilityError
from .model import ModelSpec, coefficient_labels
from .precision import CholeskyEstimate, PenaltyPolicy, estimate_precision


@dataclass(frozen=True)
class Design:
    """Covariates arranged for per-outcome-column access.

    ``u`` is the N x pu time-invariant matrix; ``w`` stacks the time-varying
    covariates with subjects fastest, so row ``tau * N + i`` belongs to
    subject ``i`` at time ``tau``.
    """

    u: np.ndarray
    w: np.ndarray
    spec: ModelSpec

    def __post_init__(self):
        object.__setattr__(self, "u", np.asarray(self.u, dtype=float))
        object.__setattr__(self, "w", np.asarray(self.w, dtype=float))

    @property
    def logical_shape(self) -> tuple[int, int]:
        """Shape of the implied full design matrix (never built)."""
        return (self.spec.n * self.spec.p, self.spec.n_coef)

    def w_at(self, tau: int) -> np.ndarray:
        """Rows of ``w`` for time ``tau`` (N x pw)."""
        n = self.spec.n
        return self.w[tau * n:(tau + 1) * n]

    def col_design(self, j: int) -> np.ndarray:
        """Design block of outcome column ``j``: U, or [U, W_tau]."""
        kind = self.spec.col_kind(j)
        if kind[0] == "geom":
            return self.u
        tau = kind[2]
        if self.spec.pw == 0:
            return self.u
        return np.hstack([self.u, self.w_at(tau)])


def assemble_design(u: np.ndarray, w: np.ndarray | None, spec: ModelSpec) -> Design:
    """Validate covariate shapes and wrap them in a :class:`Design`."""
    u = np.asarray(u, dtype=float)
    if u.shape != (spec.n, spec.pu):
        raise DimensionError(f"u must be {spec.n} x {spec.pu}, got {u.shape}")
    if w is None:
        w = np.zeros((spec.n * spec.t, 0))
    w = np.asarray(w, dtype=float)
    if w.shape != (spec.n * spec.t, spec.pw):
        raise DimensionError(
            f"w must be {spec.n * spec.t} x {spec.pw}, got {w.shape}"
        )
    return Design(u=u, w=w, spec=spec)


@dataclass(frozen=True)
class IdentifiabilityReport:
    u_rank: int
    uw_rank: int
    ok: bool


def validate_identifiability(u: np.ndarray, w: np.ndarray | None) -> IdentifiabilityReport:
    """Numerical column ranks of U and of [U_T, W].

    The repetition count of ``U`` is inferred from the row counts; the
    verdict is carried in the report rather than raised.
    """
    u = np.asarray(u, dtype=float)
    n, pu = u.shape
    u_rank = int(np.linalg.matrix_rank(u))
    if w is None or w.shape[1] == 0:
        return IdentifiabilityReport(u_rank=u_rank, uw_rank=u_rank, ok=u_rank == pu)
    w = np.asarray(w, dtype=float)
    if w.shape[0] % n != 0:
        raise DimensionError(f"w row count {w.shape[0]} is not a multiple of n={n}")
    t = w.shape[0] // n
    uw = np.hstack([np.tile(u, (t, 1)), w])
    uw_rank = int(np.linalg.matrix_rank(uw))
    return IdentifiabilityReport(
        u_rank=u_rank,
        uw_rank=uw_rank,
        ok=u_rank == pu and uw_rank == pu + w.shape[1],
    )


@dataclass(frozen=True)
class FixedEffects:
    """Packed fixed-effect vector: per-component blocks of covariate coefficients.

    Geometric components contribute ``pu`` coefficients apiece, functional
    components ``pu + pw`` (time-invariant effects first, then the
    time-varying effects).
    """

    values: np.ndarray
    spec: ModelSpec

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))
        if self.values.shape != (self.spec.n_coef,):
            raise DimensionError(
                f"packed coefficients must have length {self.spec.n_coef}, "
                f"got {self.values.shape}"
            )

    def alpha_g(self) -> np.ndarray:
        """Time-invariant effects on the geometric components (pu x kg)."""
        s = self.spec
        return self.values[: s.kg * s.pu].reshape(s.kg, s.pu).T

    def alpha_f(self) -> np.ndarray:
        """Time-invariant effects on the functional components (pu x kf)."""
        s = self.spec
        blocks = self.values[s.kg * s.pu:].reshape(s.kf, s.pu + s.pw)
        return blocks[:, : s.pu].T

    def beta(self) -> np.ndarray:
        """Time-varying effects on the functional components (pw x kf)."""
        s = self.spec
        blocks = self.values[s.kg * s.pu:].reshape(s.kf, s.pu + s.pw)
        return blocks[:, s.pu:].T


def pack_fixed_effects(alpha_g: np.ndarray, alpha_f: np.ndarray,
                       beta: np.ndarray, spec: ModelSpec) -> FixedEffects:
    """Pack (pu x kg), (pu x kf), (pw x kf) coefficient matrices."""
    alpha_g = np.asarray(alpha_g, dtype=float)
    alpha_f = np.asarray(alpha_f, dtype=float)
    beta = np.asarray(beta, dtype=float).reshape(spec.pw, spec.kf)
    if alpha_g.shape != (spec.pu, spec.kg) or alpha_f.shape != (spec.pu, spec.kf):
        raise DimensionError("fixed-effect matrices do not match the model spec")
    parts = [alpha_g.T.ravel()]
    for k in range(spec.kf):
        parts.append(alpha_f[:, k])
        parts.append(beta[:, k])
    return FixedEffects(values=np.concatenate(parts), spec=spec)


def predict_outcomes(design: Design, b: FixedEffects) -> np.ndarray:
    """Fitted N x p outcome matrix implied by packed coefficients."""
    spec = design.spec
    out = np.empty((spec.n, spec.p))
    for j in range(spec.p):
        coef = b.values[spec.coef_slice(spec.col_group(j))]
        out[:, j] = design.col_design(j) @ coef
    return out


def _gram_tables(design: Design) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Precomputed cross-Gram matrices between the distinct design blocks."""
    spec = design.spec
    u = design.u
    guu = u.T @ u
    if spec.pw:
        w3 = design.w.reshape(spec.t, spec.n, spec.pw)
        guw = np.einsum("ni,tnj->tij", u, w3)
        gww = np.einsum("tni,snj->tsij", w3, w3)
    else:
        w3 = np.zeros((spec.t, spec.n, 0))
        guw = np.zeros((spec.t, spec.pu, 0))
        gww = np.zeros((spec.t, spec.t, 0, 0))
    return guu, guw, gww, w3


def _normal_matrix(design: Design, sigma_inv: np.ndarray) -> np.ndarray:
    """Assemble ``X' (Sigma^-1 (x) I_N) X`` blockwise."""
    spec = design.spec
    kg, kf, t, pu, pw = spec.kg, spec.kf, spec.t, spec.pu, spec.pw
    q = pu + pw
    guu, guw, gww, _ = _gram_tables(design)
    m = np.zeros((spec.n_coef, spec.n_coef))

    m[: kg * pu, : kg * pu] = np.kron(sigma_inv[:kg, :kg], guu)

    for k in range(kf):
        cols_k = spec.func_block(k)
        rk = spec.coef_slice(kg + k)
        for g in range(kg):
            svec = sigma_inv[g, cols_k]
            block = np.empty((pu, q))
            block[:, :pu] = svec.sum() * guu
            block[:, pu:] = np.einsum("t,tij->ij", svec, guw)
            rg = spec.coef_slice(g)
            m[rg, rk] = block
            m[rk, rg] = block.T
        for k2 in range(k, kf):
            s_blk = sigma_inv[cols_k, spec.func_block(k2)]
            block = np.empty((q, q))
            block[:pu, :pu] = s_blk.sum() * guu
            block[:pu, pu:] = np.einsum("s,sij->ij", s_blk.sum(axis=0), guw)
            block[pu:, :pu] = np.einsum("t,tij->ij", s_blk.sum(axis=1), guw).T
            block[pu:, pu:] = np.einsum("ts,tsij->ij", s_blk, gww)
            rk2 = spec.coef_slice(kg + k2)
            m[rk, rk2] = block
            if k2 != k:
                m[rk2, rk] = block.T
    return m


def _rhs_vector(design: Design, sigma_inv: np.ndarray, outcomes: np.ndarray) -> np.ndarray:
    """Assemble ``X' (Sigma^-1 (x) I_N) vec(a)`` blockwise."""
    spec = design.spec
    kg, kf, t, pu, pw = spec.kg, spec.kf, spec.t, spec.pu, spec.pw
    _, _, _, w3 = _gram_tables(design)
    ytil = outcomes @ sigma_inv
    rhs = np.empty(spec.n_coef)
    rhs[: kg * pu] = (design.u.T @ ytil[:, :kg]).T.ravel()
    yf = ytil[:, kg:].reshape(spec.n, kf, t)
    for k in range(kf):
        rk = spec.coef_slice(kg + k)
        block = np.empty(pu + pw)
        block[:pu] = design.u.T @ yf[:, k, :].sum(axis=1)
        if pw:
            block[pu:] = np.einsum("tnj,nt->j", w3, yf[:, k, :])
        rhs[rk] = block
    return rhs


def gls_update(design: Design, sigma_inv: np.ndarray, outcomes: np.ndarray) -> FixedEffects:
    """Exact generalized-least-squares coefficients for a given weight matrix.

    With ``sigma_inv`` equal to the identity this coincides with column-wise
    ordinary least squares.
    """
    spec = design.spec
    outcomes = np.asarray(outcomes, dtype=float)
    if outcomes.shape != (spec.n, spec.p):
        raise DimensionError(f"outcomes must be {spec.n} x {spec.p}, got {outcomes.shape}")
    m = _normal_matrix(design, np.asarray(sigma_inv, dtype=float))
    rhs = _rhs_vector(design, sigma_inv, outcomes)
    try:
        chol = scipy.linalg.cho_factor(m)
    except scipy.linalg.LinAlgError:
        raise IdentifiabilityError("normal matrix is singular; check design ranks") from None
    return FixedEffects(values=scipy.linalg.cho_solve(chol, rhs), spec=spec)


@dataclass(frozen=True)
class FitOptions:
    """Convergence thresholds and iteration budget of the alternating fit."""

    c_b: float = 1e-6
    c_sigma: float = 1e-6
    n_iter: int = 100


@dataclass(frozen=True)
class FitResult:
    b_hat: FixedEffects
    sigma_hat: np.ndarray
    sigma_inv_hat: np.ndarray
    iterations: int
    trace: np.ndarray = field(repr=False)  # (iterations, 2): coefficient delta, KL delta
    converged: bool = True
    cholesky: CholeskyEstimate | None = field(default=None, repr=False)


def gls_loop(outcomes: np.ndarray, design: Design, update_covariance,
             options: FitOptions | None = None) -> FitResult:
    """Alternate GLS coefficient updates with a pluggable covariance update.

    ``update_covariance`` maps the N x p residual matrix to a
    ``(sigma, sigma_inv)`` pair.  Starts from zero coefficients and identity
    covariance; stops when both the squared coefficient change and the KL
    divergence between successive covariances drop below their thresholds in
    the same iteration, or when the budget is exhausted (in which case the
    result is still returned with ``converged=False``).
    """
    options = options or FitOptions()
    spec = design.spec
    outcomes = np.asarray(outcomes, dtype=float)
    b_prev = np.zeros(spec.n_coef)
    sigma_prev = np.eye(spec.p)
    sigma_inv = np.eye(spec.p)
    sigma = sigma_prev
    trace = []
    converged = False
    iterations = 0
    b = FixedEffects(values=b_prev, spec=spec)
    for iterations in range(1, options.n_iter + 1):
        b = gls_update(design, sigma_inv, outcomes)
        delta_b = float(np.sum((b.values - b_prev) ** 2))
        residuals = outcomes - predict_outcomes(design, b)
        sigma, sigma_inv = update_covariance(residuals)
        delta_kl = kl_divergence(sigma, sigma_prev)
        trace.append((delta_b, delta_kl))
        b_prev, sigma_prev = b.values, sigma
        if delta_b < options.c_b and delta_kl < options.c_sigma:
            converged = True
            break
    return FitResult(
        b_hat=b,
        sigma_hat=sigma,
        sigma_inv_hat=sigma_inv,
        iterations=iterations,
        trace=np.asarray(trace),
        converged=converged,
    )


def fit_iterative(outcomes: np.ndarray, design: Design, spec: ModelSpec,
                  policy: PenaltyPolicy, options: FitOptions | None = None) -> FitResult:
    """Iterative estimation with the row-regression precision update."""
    if spec != design.spec:
        raise DimensionError("spec does not match the design")
    last: list = [None]

    def update(residuals: np.ndarray):
        est = estimate_precision(residuals, spec, policy)
        last[0] = est
        return est.sigma_hat, est.sigma_inv_hat

    result = gls_loop(outcomes, design, update, options)
    return dataclasses.replace(result, cholesky=last[0])


@dataclass(frozen=True)
class WaldReport:
    """Per-coefficient estimates, standard errors, z statistics, p-values."""

    labels: tuple
    estimate: np.ndarray
    se: np.ndarray
    z: np.ndarray
    p: np.ndarray


def wald_tests(fit: FitResult, design: Design) -> WaldReport:
    """Wald statistics from the blockwise GLS covariance of the coefficients.

    Standard errors are square roots of the diagonal of the inverted normal
    matrix; each statistic is compared against the standard normal.
    """
    if not fit.converged:
        warnings.warn("Wald tests computed from a non-converged fit", ConvergenceWarning)
    m = _normal_matrix(design, fit.sigma_inv_hat)
    try:
        chol = scipy.linalg.cho_factor(m)
    except scipy.linalg.LinAlgError:
        raise IdentifiabilityError("normal matrix is singular; check design ranks") from None
    cov = scipy.linalg.cho_solve(chol, np.eye(m.shape[0]))
    se = np.sqrt(np.diag(cov))
    z = fit.b_hat.values / se
    return WaldReport(
        labels=tuple(coefficient_labels(design.spec)),
        estimate=fit.b_hat.values.copy(),
        se=se,
        z=z,
        p=2.0 * norm.sf(np.abs(z)),
    )
