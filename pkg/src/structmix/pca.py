"""Empirical PCA of momenta matrices and flat functional PCA.

Momenta rows vectorize one subject's d x 3 field column by column, so the
column count is divisible by 3.  Functional data stack time within subject
blocks: row ``tau * N + i`` is subject ``i`` at time ``tau``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, IdentifiabilityError, ParameterError, ValidityError


@dataclass(frozen=True)
class PcBasis:
    """Orthonormal components (columns), projection scores, explained shares."""

    components: np.ndarray
    scores: np.ndarray
    explained: np.ndarray
    mean: np.ndarray

    @property
    def k(self) -> int:
        return self.components.shape[1]


def pre_residualize(data: np.ndarray, covariates: np.ndarray) -> np.ndarray:
    """Project data onto the orthogonal complement of the covariate columns.

    Removes covariance induced by shared covariates before a principal
    component decomposition; idempotent and norm non-increasing.
    """
    data = np.asarray(data, dtype=float)
    covariates = np.asarray(covariates, dtype=float)
    if data.shape[0] != covariates.shape[0]:
        raise DimensionError("data and covariates must have the same row count")
    if np.linalg.matrix_rank(covariates) < covariates.shape[1]:
        raise IdentifiabilityError("covariates are rank deficient")
    coef, *_ = np.linalg.lstsq(covariates, data, rcond=None)
    return data - covariates @ coef


def _fix_signs(components: np.ndarray) -> np.ndarray:
    """Make each component's largest-magnitude entry positive (deterministic output)."""
    idx = np.argmax(np.abs(components), axis=0)
    signs = np.sign(components[idx, np.arange(components.shape[1])])
    signs[signs == 0] = 1.0
    return components * signs[None, :]


def empirical_pca(data: np.ndarray, k: int) -> PcBasis:
    """Column-mean-centered truncated singular value decomposition.

    Components are the top-k right singular directions, scores the centered
    data projected onto them, explained shares the squared singular values
    over their total.
    """
    data = np.asarray(data, dtype=float)
    if data.ndim != 2:
        raise DimensionError("data must be 2-dimensional")
    if not np.all(np.isfinite(data)):
        raise ValidityError("data contains non-finite entries")
    n, d = data.shape
    if not 1 <= k <= min(n - 1, d):
        raise ParameterError(f"k={k} out of range for data of shape {data.shape}")
    mean = data.mean(axis=0)
    centered = data - mean
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    components = _fix_signs(vt[:k].T)
    total = float(np.sum(s ** 2))
    explained = (s[:k] ** 2 / total) if total > 0 else np.zeros(k)
    return PcBasis(
        components=components,
        scores=centered @ components,
        explained=explained,
        mean=mean,
    )


def fpca_flat(data: np.ndarray, k: int) -> PcBasis:
    """Functional PCA of time-stacked data without a smoothing penalty.

    Centers by the grand mean (the average over all subject-time rows) and
    decomposes exactly as :func:`empirical_pca`; with the roughness penalty
    at zero the iterative rank-1 deflation solution coincides with this
    truncated SVD.  Scores keep the subject-fastest row indexing.
    """
    return empirical_pca(data, k)
