"""Structured covariance blocks and the Cholesky-of-precision representation.

The random-effect covariance couples a diagonal geometric block with one
temporal block per functional component; the only nonzero off-diagonal blocks
are the geometric-functional cross blocks.  The precision matrix is
parameterized as ``L' D^{-1} L`` with ``L`` unit lower triangular and ``D``
positive diagonal, which keeps every reconstructed covariance positive
definite by construction.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg
import scipy.optimize

from .errors import ConvergenceWarning, DimensionError, ParameterError, ValidityError
from .model import ModelSpec

SYM_RTOL = 1e-9  # relative symmetry tolerance for matrix inputs


def _check_symmetric(m: np.ndarray, name: str = "matrix") -> np.ndarray:
    """Validate near-symmetry and return the symmetrized matrix."""
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValidityError(f"{name} contains non-finite entries")
    scale = 1.0 + float(np.abs(m).max(initial=0.0))
    if float(np.abs(m - m.T).max(initial=0.0)) > SYM_RTOL * scale:
        raise ValidityError(f"{name} is not symmetric within tolerance")
    return 0.5 * (m + m.T)


def _cholesky_pd(m: np.ndarray, name: str = "matrix") -> np.ndarray:
    """Lower Cholesky factor, raising a validity error for non-PD input."""
    try:
        return np.linalg.cholesky(m)
    except np.linalg.LinAlgError:
        raise ValidityError(f"{name} is not positive definite") from None


@dataclass(frozen=True)
class StructuredCovariance:
    """Blocks of the random-effect covariance plus the error variance.

    sigma_gg  : (kg,) positive variances of the geometric components
    sigma_ff  : (kf, t, t) symmetric PD temporal blocks
    sigma_gf  : (kf, kg, t) geometric-functional cross blocks
    sigma_eps2: nonnegative measurement-error variance
    """

    sigma_gg: np.ndarray
    sigma_ff: np.ndarray
    sigma_gf: np.ndarray
    sigma_eps2: float

    def __post_init__(self):
        object.__setattr__(self, "sigma_gg", np.asarray(self.sigma_gg, dtype=float))
        object.__setattr__(self, "sigma_ff", np.asarray(self.sigma_ff, dtype=float))
        object.__setattr__(self, "sigma_gf", np.asarray(self.sigma_gf, dtype=float))
        object.__setattr__(self, "sigma_eps2", float(self.sigma_eps2))
        if self.sigma_gg.ndim != 1:
            raise DimensionError("sigma_gg must be a vector")
        if self.sigma_ff.ndim != 3 or self.sigma_ff.shape[1] != self.sigma_ff.shape[2]:
            raise DimensionError("sigma_ff must have shape (kf, t, t)")
        kf, t = self.sigma_ff.shape[0], self.sigma_ff.shape[1]
        if self.sigma_gf.shape != (kf, self.sigma_gg.shape[0], t):
            raise DimensionError(
                f"sigma_gf must have shape (kf, kg, t)={(kf, self.sigma_gg.shape[0], t)}, "
                f"got {self.sigma_gf.shape}"
            )
        for arr, name in ((self.sigma_gg, "sigma_gg"), (self.sigma_ff, "sigma_ff"),
                          (self.sigma_gf, "sigma_gf")):
            if not np.all(np.isfinite(arr)):
                raise ValidityError(f"{name} contains non-finite entries")
        if np.any(self.sigma_gg <= 0):
            raise ValidityError("sigma_gg entries must be positive")
        if self.sigma_eps2 < 0:
            raise ValidityError("sigma_eps2 must be nonnegative")

    @property
    def kg(self) -> int:
        return self.sigma_gg.shape[0]

    @property
    def kf(self) -> int:
        return self.sigma_ff.shape[0]

    @property
    def t(self) -> int:
        return self.sigma_ff.shape[1]

    def without_noise(self) -> "StructuredCovariance":
        """Copy with the error variance zeroed (the pure random-effect part)."""
        return replace(self, sigma_eps2=0.0)


@dataclass(frozen=True)
class CholeskyFactors:
    """Unit-lower-triangular ``L`` and positive diagonal ``d`` with precision ``L' D^{-1} L``."""

    l: np.ndarray
    d: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "l", np.asarray(self.l, dtype=float))
        object.__setattr__(self, "d", np.asarray(self.d, dtype=float))
        p = self.l.shape[0]
        if self.l.shape != (p, p) or self.d.shape != (p,):
            raise DimensionError("l must be p x p and d length p")
        if not np.allclose(np.diag(self.l), 1.0):
            raise ValidityError("l must have unit diagonal")
        if np.any(np.triu(self.l, 1) != 0.0):
            raise ValidityError("l must be lower triangular")
        if np.any(self.d <= 0) or not np.all(np.isfinite(self.d)):
            raise ValidityError("all d entries must be positive and finite")

    @property
    def p(self) -> int:
        return self.d.shape[0]

    @property
    def zeta(self) -> np.ndarray:
        """Strictly-lower prediction coefficients, ``L = I - zeta``."""
        return np.eye(self.p) - self.l

    def precision(self) -> np.ndarray:
        """Assemble ``L' D^{-1} L``."""
        return self.l.T @ (self.l / self.d[:, None])

    def sigma(self) -> np.ndarray:
        """Assemble ``L^{-1} D L^{-T}`` (positive definite by construction)."""
        linv = scipy.linalg.solve_triangular(
            self.l, np.eye(self.p), lower=True, unit_diagonal=True
        )
        return (linv * self.d[None, :]) @ linv.T


@dataclass(frozen=True)
class ParametricSpec:
    """Stationary AR(1) family for the functional temporal blocks.

    block_variances holds one marginal variance per functional component, rho
    is the shared autocorrelation, sigma_eps2 the error variance added to the
    diagonal.
    """

    block_variances: np.ndarray
    rho: float
    sigma_eps2: float
    form: str = "ar1"

    def __post_init__(self):
        object.__setattr__(self, "block_variances",
                           np.asarray(self.block_variances, dtype=float))
        object.__setattr__(self, "rho", float(self.rho))
        object.__setattr__(self, "sigma_eps2", float(self.sigma_eps2))
        if self.form != "ar1":
            raise ParameterError(f"unsupported parametric form {self.form!r}")
        if np.any(self.block_variances <= 0):
            raise ParameterError("block variances must be positive")
        if not abs(self.rho) < 1:
            raise ParameterError("rho must lie in (-1, 1)")
        if self.sigma_eps2 < 0:
            raise ParameterError("sigma_eps2 must be nonnegative")


@dataclass(frozen=True)
class ParametricFit:
    """Result of fitting the parametric family to an estimated covariance."""

    params: ParametricSpec
    kl: float
    n_evals: int = field(default=0, compare=False)


def ar1_block(variance: float, rho: float, t: int) -> np.ndarray:
    """Stationary AR(1) covariance: entry ``(i, j) = variance * rho**|i-j|``."""
    if variance <= 0:
        raise ParameterError(f"variance must be positive, got {variance}")
    if not abs(rho) < 1:
        raise ParameterError(f"rho must lie in (-1, 1), got {rho}")
    if t < 1:
        raise ParameterError(f"t must be positive, got {t}")
    idx = np.arange(t)
    return variance * rho ** np.abs(idx[:, None] - idx[None, :])


def build_sigma(blocks: StructuredCovariance, spec: ModelSpec) -> np.ndarray:
    """Assemble the full outcome covariance ``Sigma_gamma + sigma_eps2 * I``.

    Raises a dimension error when the blocks do not match ``spec`` and a
    validity error when any temporal block or the assembled matrix is not
    positive definite.
    """
    if (blocks.kg, blocks.kf, blocks.t) != (spec.kg, spec.kf, spec.t):
        raise DimensionError(
            f"covariance blocks (kg={blocks.kg}, kf={blocks.kf}, t={blocks.t}) "
            f"do not match spec (kg={spec.kg}, kf={spec.kf}, t={spec.t})"
        )
    p = spec.p
    sigma = np.zeros((p, p))
    sigma[: spec.kg, : spec.kg] = np.diag(blocks.sigma_gg)
    for k in range(spec.kf):
        blk = _check_symmetric(blocks.sigma_ff[k], f"sigma_ff[{k}]")
        if np.linalg.eigvalsh(blk)[0] <= 0:
            raise ValidityError(f"sigma_ff[{k}] is not positive definite")
        cols = spec.func_block(k)
        sigma[cols, cols] = blk
        sigma[: spec.kg, cols] = blocks.sigma_gf[k]
        sigma[cols, : spec.kg] = blocks.sigma_gf[k].T
    sigma[np.diag_indices(p)] += blocks.sigma_eps2
    if np.linalg.eigvalsh(sigma)[0] <= 0:
        raise ValidityError("assembled covariance is not positive definite")
    return sigma


def kl_divergence(sigma_new: np.ndarray, sigma_old: np.ndarray) -> float:
    """Gaussian KL-style divergence ``tr(old^-1 new) - ln|old^-1 new| - p``.

    Zero exactly when the arguments coincide; used as the covariance
    convergence criterion of the iterative fit.
    """
    new = _check_symmetric(sigma_new, "sigma_new")
    old = _check_symmetric(sigma_old, "sigma_old")
    if new.shape != old.shape:
        raise DimensionError(f"dimension mismatch: {new.shape} vs {old.shape}")
    p = new.shape[0]
    c_new = _cholesky_pd(new, "sigma_new")
    c_old = _cholesky_pd(old, "sigma_old")
    # tr(old^-1 new) = ||c_old^-1 c_new||_F^2
    w = scipy.linalg.solve_triangular(c_old, c_new, lower=True)
    trace = float(np.sum(w * w))
    logdet = 2.0 * float(np.sum(np.log(np.diag(c_new))) - np.sum(np.log(np.diag(c_old))))
    return max(trace - logdet - p, 0.0)


def dense_cholesky_precision(sigma: np.ndarray) -> CholeskyFactors:
    """Factor a dense PD covariance into the unit-triangular precision form.

    Brute-force counterpart of the regression-based estimator: from the
    standard Cholesky ``sigma = C C'`` one has ``d = diag(C)^2`` and
    ``L = (C diag(C)^-1)^-1``.
    """
    sym = _check_symmetric(sigma, "sigma")
    c = _cholesky_pd(sym, "sigma")
    d = np.diag(c) ** 2
    linv = c / np.sqrt(d)[None, :]
    l = scipy.linalg.solve_triangular(linv, np.eye(sym.shape[0]),
                                      lower=True, unit_diagonal=True)
    np.fill_diagonal(l, 1.0)
    l[np.triu_indices_from(l, 1)] = 0.0
    return CholeskyFactors(l=l, d=d)


def ensure_pd(m: np.ndarray, floor: float) -> np.ndarray:
    """Replace eigenvalues below ``floor`` by ``floor``.

    Positive-definite inputs pass through unchanged, which makes the
    operation idempotent.
    """
    if floor <= 0:
        raise ParameterError(f"floor must be positive, got {floor}")
    sym = _check_symmetric(m, "matrix")
    eigvals, eigvecs = np.linalg.eigh(sym)
    scale = max(1.0, float(np.abs(eigvals).max(initial=0.0)))
    if eigvals[0] >= floor - 1e-12 * scale:
        return sym
    clipped = np.maximum(eigvals, floor)
    out = (eigvecs * clipped[None, :]) @ eigvecs.T
    return 0.5 * (out + out.T)


def _ar1_family_sigma(sigma_hat: np.ndarray, spec: ModelSpec,
                      variances: np.ndarray, rho: float, eps2: float) -> np.ndarray:
    """Parametric candidate: functional blocks replaced by AR(1) + eps2 * I.

    The geometric and cross blocks are held at the nonparametric estimate;
    only the temporal structure and the noise split are re-parameterized.
    """
    out = sigma_hat.copy()
    for k in range(spec.kf):
        cols = spec.func_block(k)
        blk = ar1_block(variances[k], rho, spec.t)
        blk[np.diag_indices(spec.t)] += eps2
        out[cols, cols] = blk
    return out


def _parametric_moment_guess(sigma_hat: np.ndarray, spec: ModelSpec) -> tuple[np.ndarray, float, float]:
    """Moment-matched starting point from the functional block diagonals.

    For an exact AR(1)-plus-noise block the ratio of mean lag-2 to mean lag-1
    covariance recovers rho without noise contamination.
    """
    lag0, lag1, lag2 = [], [], []
    for k in range(spec.kf):
        blk = sigma_hat[spec.func_block(k), spec.func_block(k)]
        lag0.append(np.mean(np.diag(blk)))
        if spec.t >= 2:
            lag1.append(np.mean(np.diag(blk, 1)))
        if spec.t >= 3:
            lag2.append(np.mean(np.diag(blk, 2)))
    rho = 0.5
    if lag2 and np.mean(lag1) != 0.0:
        rho = float(np.clip(np.mean(lag2) / np.mean(lag1), -0.98, 0.98))
    variances = np.empty(spec.kf)
    eps_guesses = []
    for k in range(spec.kf):
        if spec.t >= 2 and rho != 0.0:
            v = float(np.diag(sigma_hat[spec.func_block(k), spec.func_block(k)], 1).mean() / rho)
        else:
            v = float(lag0[k])
        v = max(v, 1e-8)
        variances[k] = v
        eps_guesses.append(max(lag0[k] - v, 0.0))
    return variances, rho, float(np.mean(eps_guesses))


def fit_parametric(sigma_hat: np.ndarray, family: ParametricSpec,
                   spec: ModelSpec) -> ParametricFit:
    """Fit the AR(1) family to an estimated covariance by KL minimization.

    Runs a bounded Nelder-Mead search restarted from a coarse autocorrelation
    grid plus a moment-matched guess; the template ``family`` provides the
    form tag and one more starting point.  Warns (and still returns the best
    iterate) when no restart improves on the first evaluation.
    """
    sigma_hat = _check_symmetric(sigma_hat, "sigma_hat")
    if sigma_hat.shape[0] != spec.p:
        raise DimensionError(f"sigma_hat must be {spec.p} x {spec.p}")
    _cholesky_pd(sigma_hat, "sigma_hat")

    n_evals = 0

    def objective(theta: np.ndarray) -> float:
        nonlocal n_evals
        n_evals += 1
        variances = np.exp(theta[: spec.kf])
        rho, eps2 = theta[spec.kf], theta[spec.kf + 1]
        cand = _ar1_family_sigma(sigma_hat, spec, variances, rho, eps2)
        try:
            return kl_divergence(cand, sigma_hat)
        except ValidityError:
            return np.inf

    mv, mrho, meps = _parametric_moment_guess(sigma_hat, spec)
    starts = [
        np.concatenate([np.log(mv), [mrho, meps]]),
        np.concatenate([np.log(np.asarray(family.block_variances, dtype=float)),
                        [family.rho, family.sigma_eps2]]),
    ]
    for rho0 in (-0.75, -0.25, 0.25, 0.75):
        starts.append(np.concatenate([np.log(mv), [rho0, meps]]))

    bounds = [(-30.0, 30.0)] * spec.kf + [(-0.999999, 0.999999), (0.0, None)]
    initial_value = objective(starts[0])
    best_theta, best_value = starts[0], initial_value
    for theta0 in starts:
        res = scipy.optimize.minimize(
            objective, theta0, method="Nelder-Mead", bounds=bounds,
            options=dict(maxiter=4000, maxfev=6000, xatol=1e-12, fatol=1e-16,
                         adaptive=True),
        )
        if res.fun < best_value:
            best_theta, best_value = res.x, float(res.fun)
    if best_value >= initial_value and initial_value > 1e-12:
        warnings.warn(
            "parametric covariance fit did not improve on its starting point",
            ConvergenceWarning,
        )
    params = ParametricSpec(
        block_variances=np.exp(best_theta[: spec.kf]),
        rho=float(np.clip(best_theta[spec.kf], -0.999999, 0.999999)),
        sigma_eps2=max(float(best_theta[spec.kf + 1]), 0.0),
        form=family.form,
    )
    return ParametricFit(params=params, kl=float(best_value), n_evals=n_evals)
