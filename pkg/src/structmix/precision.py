"""Precision-matrix estimation through per-row regularized regressions.

Each row ``j`` of the prediction-coefficient matrix is the solution of a
lasso regression of residual column ``j`` on all earlier columns, with the
objective ``||y - X b||^2 + lambda * ||b||_1`` (no 1/2N factor, so the
soft threshold for unit-norm columns is ``lambda / 2``).  Row solutions are
mutually independent; the diagonal entries are degrees-of-freedom-corrected
residual variances.  The assembled covariance is positive definite whenever
every residual column has a nonzero prediction residual.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

try:
    from numba import njit
except ModuleNotFoundError:  # pure-numpy fallback below
    njit = None

from .covariance import CholeskyFactors
from .errors import (
    ConvergenceWarning,
    DegenerateColumnError,
    DimensionError,
    OverfitError,
    ParameterError,
    ValidityError,
)
from .model import ModelSpec

CD_TOL = 1e-8       # max coefficient change per sweep
CD_MAX_SWEEPS = 10_000
BISECT_ITERS = 60


@dataclass(frozen=True)
class PenaltyPolicy:
    """How the per-row lasso penalties are chosen.

    Exactly the fields required by ``mode`` may be set: ``tau`` (per-row
    nonzero budgets, entries of ``None`` meaning unpenalized) for
    ``target_sparsity``, ``lam`` (scalar or per-row vector) for
    ``fixed_lambda``, ``cv_folds`` for ``cross_validation``.
    """

    mode: str
    tau: tuple | None = None
    lam: object = None
    cv_folds: int = 5

    def __post_init__(self):
        if self.mode == "target_sparsity":
            if self.lam is not None:
                raise ParameterError("target_sparsity mode does not take lam")
        elif self.mode == "fixed_lambda":
            if self.lam is None:
                raise ParameterError("fixed_lambda mode requires lam")
            if self.tau is not None:
                raise ParameterError("fixed_lambda mode does not take tau")
        elif self.mode == "cross_validation":
            if self.lam is not None or self.tau is not None:
                raise ParameterError("cross_validation mode takes only cv_folds")
            if self.cv_folds < 2:
                raise ParameterError("cv_folds must be at least 2")
        else:
            raise ParameterError(f"unknown penalty mode {self.mode!r}")
        if self.tau is not None:
            object.__setattr__(self, "tau", tuple(self.tau))

    @classmethod
    def target_sparsity(cls, tau=None) -> "PenaltyPolicy":
        """Budgeted mode; ``tau=None`` derives per-row budgets from the model spec."""
        return cls(mode="target_sparsity", tau=tau)

    @classmethod
    def fixed_lambda(cls, lam) -> "PenaltyPolicy":
        return cls(mode="fixed_lambda", lam=lam)

    @classmethod
    def cross_validation(cls, folds: int = 5) -> "PenaltyPolicy":
        return cls(mode="cross_validation", cv_folds=folds)


@dataclass(frozen=True)
class CholeskyEstimate:
    """Estimated factors plus the assembled covariance and precision."""

    factors: CholeskyFactors
    sigma_hat: np.ndarray
    sigma_inv_hat: np.ndarray
    support: tuple

    @property
    def p(self) -> int:
        return self.factors.p


def _validate_residuals(residuals: np.ndarray) -> np.ndarray:
    r = np.asarray(residuals, dtype=float)
    if r.ndim != 2:
        raise DimensionError("residual matrix must be 2-dimensional")
    if not np.all(np.isfinite(r)):
        raise ValidityError("residual matrix contains non-finite entries")
    return r


def soft_threshold(z: float, threshold: float) -> float:
    """Scalar soft-thresholding operator."""
    if z > threshold:
        return z - threshold
    if z < -threshold:
        return z + threshold
    return 0.0


def _cd_sweeps(x, y, col_sq, beta, resid, threshold, tol, max_sweeps):
    """Full verification sweeps interleaved with active-set sweeps.

    Mutates ``beta``/``resid`` in place and returns the sweep count, negated
    when the budget ran out before a full sweep converged.
    """
    n, m = x.shape
    sweeps = 0
    while sweeps < max_sweeps:
        sweeps += 1
        max_delta = 0.0
        for k in range(m):
            if col_sq[k] == 0.0:
                continue
            old = beta[k]
            z = old * col_sq[k]
            for i in range(n):
                z += x[i, k] * resid[i]
            if z > threshold:
                new = (z - threshold) / col_sq[k]
            elif z < -threshold:
                new = (z + threshold) / col_sq[k]
            else:
                new = 0.0
            if new != old:
                step = old - new
                for i in range(n):
                    resid[i] += x[i, k] * step
                beta[k] = new
                delta = abs(new - old)
                if delta > max_delta:
                    max_delta = delta
        if max_delta < tol:
            return sweeps
        # refine the current support before the next full verification sweep
        while sweeps < max_sweeps:
            sweeps += 1
            max_delta = 0.0
            for k in range(m):
                if beta[k] == 0.0 or col_sq[k] == 0.0:
                    continue
                old = beta[k]
                z = old * col_sq[k]
                for i in range(n):
                    z += x[i, k] * resid[i]
                if z > threshold:
                    new = (z - threshold) / col_sq[k]
                elif z < -threshold:
                    new = (z + threshold) / col_sq[k]
                else:
                    new = 0.0
                if new != old:
                    step = old - new
                    for i in range(n):
                        resid[i] += x[i, k] * step
                    beta[k] = new
                    delta = abs(new - old)
                    if delta > max_delta:
                        max_delta = delta
            if max_delta < tol:
                break
    return -sweeps


if njit is not None:
    _cd_sweeps = njit(cache=True)(_cd_sweeps)
else:
    def _cd_sweeps(x, y, col_sq, beta, resid, threshold, tol, max_sweeps):  # noqa: F811
        """Vectorized fallback with the same sweep structure as the kernel."""
        m = x.shape[1]

        def sweep(indices) -> float:
            max_delta = 0.0
            for k in indices:
                if col_sq[k] == 0.0:
                    continue
                old = beta[k]
                z = float(x[:, k] @ resid) + old * col_sq[k]
                new = soft_threshold(z, threshold) / col_sq[k]
                if new != old:
                    resid += x[:, k] * (old - new)
                    beta[k] = new
                    max_delta = max(max_delta, abs(new - old))
            return max_delta

        sweeps = 0
        while sweeps < max_sweeps:
            sweeps += 1
            if sweep(range(m)) < tol:
                return sweeps
            while sweeps < max_sweeps:
                sweeps += 1
                if sweep(np.flatnonzero(beta)) < tol:
                    break
        return -sweeps


def _coordinate_descent(x: np.ndarray, y: np.ndarray, lam: float,
                        beta0: np.ndarray | None = None) -> np.ndarray:
    """Cyclic coordinate descent with soft thresholding and warm starts."""
    x = np.ascontiguousarray(x)
    col_sq = np.einsum("ij,ij->j", x, x)
    if beta0 is None:
        beta = np.zeros(x.shape[1])
        resid = y.copy()
    else:
        beta = beta0.copy()
        resid = y - x @ beta
    sweeps = _cd_sweeps(x, y, col_sq, beta, resid, 0.5 * lam, CD_TOL, CD_MAX_SWEEPS)
    if sweeps < 0:
        warnings.warn(
            f"coordinate descent exhausted {CD_MAX_SWEEPS} sweeps (lambda={lam})",
            ConvergenceWarning,
        )
    return beta


def _ols(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Unpenalized least squares (minimum-norm when rank deficient)."""
    if x.shape[1] == 0:
        return np.zeros(0)
    return np.linalg.lstsq(x, y, rcond=None)[0]


def lasso_row(residuals: np.ndarray, j: int, lam: float) -> np.ndarray:
    """Lasso coefficients of residual column ``j`` on columns ``[:j]`` (0-based).

    Solved by cyclic coordinate descent with soft thresholding; convergence
    is declared when the largest coefficient change in a sweep drops below
    1e-8.
    """
    r = _validate_residuals(residuals)
    if not 1 <= j < r.shape[1]:
        raise DimensionError(f"column {j} must have at least one predecessor")
    if lam < 0:
        raise ParameterError(f"lambda must be nonnegative, got {lam}")
    return _coordinate_descent(r[:, :j], r[:, j], lam)


def lambda_max(x: np.ndarray, y: np.ndarray) -> float:
    """Smallest penalty for which the all-zero vector is optimal."""
    if x.shape[1] == 0:
        return 0.0
    return 2.0 * float(np.abs(x.T @ y).max())


def lambda_for_target(residuals: np.ndarray, j: int, tau_j: int) -> tuple[float, np.ndarray]:
    """Pick the penalty whose solution has at most ``tau_j`` nonzeros.

    Bisects on ``[0, lambda_max * (1 + 1e-6)]`` for 60 iterations, keeping
    the admissible solution with the largest nonzero count (ties resolved
    toward the larger, more sparse penalty).  ``tau_j >= j`` short-circuits
    to the unpenalized solution.
    """
    r = _validate_residuals(residuals)
    if not 1 <= j < r.shape[1]:
        raise DimensionError(f"column {j} must have at least one predecessor")
    if not 0 <= tau_j <= j:
        raise ParameterError(f"tau={tau_j} out of range for {j} predecessors")
    x, y = r[:, :j], r[:, j]
    if tau_j >= j:
        return 0.0, _ols(x, y)
    lmax = lambda_max(x, y)
    if lmax == 0.0:
        return 0.0, np.zeros(j)
    lo, hi = 0.0, lmax * (1.0 + 1e-6)
    best_lam, best_beta, best_count = hi, np.zeros(j), 0
    beta = np.zeros(j)
    for _ in range(BISECT_ITERS):
        mid = 0.5 * (lo + hi)
        beta = _coordinate_descent(x, y, mid, beta0=beta)
        count = int(np.count_nonzero(beta))
        if count > tau_j:
            lo = mid
        else:
            hi = mid
            if count > best_count or (count == best_count and mid > best_lam):
                best_lam, best_beta, best_count = mid, beta.copy(), count
    return best_lam, best_beta


def default_tau(spec: ModelSpec, j: int):
    """Per-row nonzero budget implied by the block structure.

    Geometric rows (``j < kg``) return ``None`` (unpenalized least squares).
    A functional row at within-block time ``tau`` may couple with every
    geometric column plus its own temporal history: budget ``kg + tau``.
    """
    kind = spec.col_kind(j)
    if kind[0] == "geom":
        return None
    _, _, tau = kind
    return spec.kg + tau


def _cv_lambda(x: np.ndarray, y: np.ndarray, folds: int) -> float:
    """Held-out squared error over a descending 50-point log grid."""
    lmax = lambda_max(x, y)
    if lmax == 0.0:
        return 0.0
    grid = np.geomspace(lmax, lmax * 1e-4, 50)
    fold_of = np.arange(x.shape[0]) % folds
    errors = np.zeros(grid.size)
    for f in range(folds):
        train, held = fold_of != f, fold_of == f
        beta = np.zeros(x.shape[1])
        for g, lam in enumerate(grid):
            beta = _coordinate_descent(x[train], y[train], lam, beta0=beta)
            delta = y[held] - x[held] @ beta
            errors[g] += float(delta @ delta)
    return float(grid[int(np.argmin(errors))])


def _solve_row(r: np.ndarray, j: int, spec: ModelSpec,
               policy: PenaltyPolicy) -> np.ndarray:
    x, y = r[:, :j], r[:, j]
    if policy.mode == "fixed_lambda":
        lam = policy.lam[j] if np.ndim(policy.lam) else policy.lam
        if lam < 0:
            raise ParameterError(f"lambda must be nonnegative, got {lam}")
        return _ols(x, y) if lam == 0.0 else _coordinate_descent(x, y, float(lam))
    if policy.mode == "cross_validation":
        lam = _cv_lambda(x, y, policy.cv_folds)
        return _ols(x, y) if lam == 0.0 else _coordinate_descent(x, y, lam)
    budget = policy.tau[j] if policy.tau is not None else default_tau(spec, j)
    if budget is None or budget >= j:
        return _ols(x, y)
    return lambda_for_target(r, j, budget)[1]


def _allowed_support(spec: ModelSpec, policy: PenaltyPolicy, j: int) -> int:
    """Largest support the policy can select at row ``j`` (0-based)."""
    if policy.mode == "target_sparsity":
        budget = policy.tau[j] if policy.tau is not None else default_tau(spec, j)
        return j if budget is None else min(budget, j)
    return j


def estimate_precision(residuals: np.ndarray, spec: ModelSpec,
                       policy: PenaltyPolicy) -> CholeskyEstimate:
    """Estimate the precision factors from observed residual vectors.

    The first column supplies its own prediction residual; every later row is
    regressed on all of its predecessors under ``policy``.  Diagonal entries
    divide the residual sum of squares by ``N`` minus the selected support
    size; a non-positive divisor raises an over-fit error and an exactly zero
    residual raises a degenerate-column error naming the column.
    """
    r = _validate_residuals(residuals)
    n, p = r.shape
    if p != spec.p:
        raise DimensionError(f"residual matrix has {p} columns, spec requires {spec.p}")
    if policy.tau is not None and len(policy.tau) != p:
        raise DimensionError("per-row tau vector must have length p")
    for j in range(p):
        if policy.tau is not None and policy.tau[j] is not None and not 0 <= policy.tau[j] <= j:
            raise ParameterError(f"tau[{j}]={policy.tau[j]} exceeds the {j} predecessors")
        if n <= 1 + _allowed_support(spec, policy, j):
            raise OverfitError(
                f"n={n} subjects cannot support {_allowed_support(spec, policy, j)} "
                f"coefficients at row {j}"
            )

    zeta = np.zeros((p, p))
    d = np.empty(p)
    support: list[tuple] = []
    for j in range(p):
        beta = _solve_row(r, j, spec, policy) if j > 0 else np.zeros(0)
        resid = r[:, j] - r[:, :j] @ beta
        ss = float(resid @ resid)
        nnz = int(np.count_nonzero(beta))
        if n - nnz <= 0:
            raise OverfitError(f"row {j} selected {nnz} coefficients with only n={n} subjects")
        if ss == 0.0:
            raise DegenerateColumnError(j)
        zeta[j, :j] = beta
        d[j] = ss / (n - nnz)
        support.append(tuple(int(k) for k in np.flatnonzero(beta)))

    factors = CholeskyFactors(l=np.eye(p) - zeta, d=d)
    return CholeskyEstimate(
        factors=factors,
        sigma_hat=factors.sigma(),
        sigma_inv_hat=factors.precision(),
        support=tuple(support),
    )
