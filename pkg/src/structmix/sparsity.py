"""Forced-zero pattern of the prediction coefficients under block coupling.

Two functional components are linked when some geometric component has a
nonzero cross-covariance row with both.  Unlinked pairs have structurally
zero cross blocks in the strictly-lower prediction-coefficient matrix; this
module predicts that pattern and verifies it numerically against the dense
factorization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .covariance import StructuredCovariance, build_sigma, dense_cholesky_precision
from .errors import ParameterError, ValidityError
from .model import ModelSpec


@dataclass(frozen=True)
class CouplingPattern:
    """Per functional component, the geometric indices with nonzero cross rows."""

    spec: ModelSpec
    gf_support: tuple

    def __post_init__(self):
        if len(self.gf_support) != self.spec.kf:
            raise ParameterError("gf_support must have one entry per functional component")
        support = tuple(frozenset(int(g) for g in s) for s in self.gf_support)
        for s in support:
            if any(not 0 <= g < self.spec.kg for g in s):
                raise ParameterError("gf_support indices must lie in [0, kg)")
        object.__setattr__(self, "gf_support", support)

    def linked(self, k1: int, k2: int) -> bool:
        """Whether components share a geometric index with nonzero cross rows."""
        return bool(self.gf_support[k1] & self.gf_support[k2])


def predicted_zero_pattern(pattern: CouplingPattern) -> np.ndarray:
    """Boolean p x p mask of prediction coefficients forced to zero.

    For every unlinked pair ``k1 < k2`` the whole cross block (rows in the
    ``k2`` block, columns in the ``k1`` block) is marked; the mask never
    leaves the strict lower triangle.
    """
    spec = pattern.spec
    mask = np.zeros((spec.p, spec.p), dtype=bool)
    for k2 in range(spec.kf):
        for k1 in range(k2):
            if not pattern.linked(k1, k2):
                mask[spec.func_block(k2), spec.func_block(k1)] = True
    return mask


@dataclass(frozen=True)
class ZeroPatternReport:
    ok: bool
    max_violation: float
    witness: tuple | None


def verify_zero_pattern(sigma: StructuredCovariance, pattern: CouplingPattern,
                  tol: float = 1e-9) -> ZeroPatternReport:
    """Check the predicted zeros on the dense factorization of the covariance.

    ``sigma`` must honor the declared pattern structurally (cross rows
    outside each support exactly zero).  The threshold scales ``tol`` by the
    largest coefficient magnitude; the witness is the worst masked entry.
    """
    spec = pattern.spec
    for k in range(spec.kf):
        outside = [g for g in range(spec.kg) if g not in pattern.gf_support[k]]
        if outside and np.any(sigma.sigma_gf[k][outside, :] != 0.0):
            raise ValidityError(
                f"cross block {k} has nonzero rows outside its declared support"
            )
    zeta = dense_cholesky_precision(build_sigma(sigma, spec)).zeta
    mask = predicted_zero_pattern(pattern)
    threshold = tol * float(np.abs(zeta).max(initial=0.0))
    if not mask.any():
        return ZeroPatternReport(ok=True, max_violation=0.0, witness=None)
    violations = np.where(mask, np.abs(zeta), -np.inf)
    j, i = np.unravel_index(int(np.argmax(violations)), violations.shape)
    worst = float(violations[j, i])
    return ZeroPatternReport(ok=worst <= threshold, max_violation=worst, witness=(int(j), int(i)))


def random_coupled_covariance(spec: ModelSpec, gf_support, rng: np.random.Generator,
                              sigma_eps2: float = 0.0) -> StructuredCovariance:
    """Generic random covariance honoring a coupling pattern's structural zeros.

    Temporal blocks are Wishart-style ``A A' + I``; declared cross rows are
    Gaussian and jointly rescaled until the assembled matrix is positive
    definite, so the only structure is the declared zero pattern.
    """
    pattern = CouplingPattern(spec=spec, gf_support=tuple(gf_support))
    sigma_gg = 0.5 + rng.random(spec.kg) * 2.0
    sigma_ff = np.empty((spec.kf, spec.t, spec.t))
    sigma_gf = np.zeros((spec.kf, spec.kg, spec.t))
    for k in range(spec.kf):
        a = rng.standard_normal((spec.t, spec.t))
        sigma_ff[k] = a @ a.T + np.eye(spec.t)
        for g in pattern.gf_support[k]:
            sigma_gf[k, g, :] = rng.standard_normal(spec.t)
    scale = 1.0
    for _ in range(60):
        candidate = StructuredCovariance(
            sigma_gg=sigma_gg, sigma_ff=sigma_ff,
            sigma_gf=sigma_gf * scale, sigma_eps2=sigma_eps2,
        )
        try:
            build_sigma(candidate, spec)
            return candidate
        except ValidityError:
            scale *= 0.5
    raise ValidityError("failed to rescale cross blocks into a PD covariance")
