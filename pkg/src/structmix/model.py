"""Model dimensions and the outcome-column index map.

The outcome vector of one subject stacks ``kg`` geometric projection
coefficients followed by ``kf`` blocks of ``t`` functional projection
coefficients (one block per functional component, times ordered within the
block).  All indices in code are 0-based; serialized artifacts use 1-based
labels (``j1..jp``).
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import DimensionError, ParameterError


@dataclass(frozen=True)
class ModelSpec:
    """Dimensions of the outcome and design.

    kg : number of geometric components
    kf : number of functional components
    t  : time points per functional component
    pu : time-invariant covariates (intercept included, if any)
    pw : time-varying covariates (may be 0)
    n  : subjects
    """

    kg: int
    kf: int
    t: int
    pu: int
    pw: int
    n: int

    def __post_init__(self):
        for name in ("kg", "kf", "t", "pu", "n"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 1:
                raise ParameterError(f"{name} must be a positive integer, got {value!r}")
        if not isinstance(self.pw, int) or self.pw < 0:
            raise ParameterError(f"pw must be a nonnegative integer, got {self.pw!r}")

    @property
    def p(self) -> int:
        """Total outcome dimension ``kg + t * kf``."""
        return self.kg + self.t * self.kf

    @property
    def n_coef(self) -> int:
        """Length of the packed fixed-effect vector."""
        return self.kg * self.pu + self.kf * (self.pu + self.pw)

    def func_col(self, k: int, tau: int) -> int:
        """Outcome column of functional component ``k`` at time ``tau`` (both 0-based)."""
        if not 0 <= k < self.kf:
            raise ParameterError(f"functional component index {k} out of range")
        if not 0 <= tau < self.t:
            raise ParameterError(f"time index {tau} out of range")
        return self.kg + k * self.t + tau

    def func_block(self, k: int) -> slice:
        """Column slice of functional component ``k``."""
        start = self.func_col(k, 0)
        return slice(start, start + self.t)

    def col_kind(self, j: int) -> tuple:
        """Classify outcome column ``j``: ``("geom", g)`` or ``("func", k, tau)``."""
        if not 0 <= j < self.p:
            raise DimensionError(f"column {j} out of range for p={self.p}")
        if j < self.kg:
            return ("geom", j)
        k, tau = divmod(j - self.kg, self.t)
        return ("func", k, tau)

    def coef_slice(self, group: int) -> slice:
        """Packed-coefficient slice of column group ``group``.

        Groups 0..kg-1 are the geometric components (``pu`` coefficients each);
        groups kg..kg+kf-1 are the functional components (``pu + pw`` each).
        """
        if not 0 <= group < self.kg + self.kf:
            raise DimensionError(f"column group {group} out of range")
        if group < self.kg:
            start = group * self.pu
            return slice(start, start + self.pu)
        start = self.kg * self.pu + (group - self.kg) * (self.pu + self.pw)
        return slice(start, start + self.pu + self.pw)

    def col_group(self, j: int) -> int:
        """Column group of outcome column ``j`` (shared design within a group)."""
        kind = self.col_kind(j)
        return kind[1] if kind[0] == "geom" else self.kg + kind[1]


def coefficient_labels(spec: ModelSpec) -> list[tuple[str, int, int]]:
    """Labels ``(group, component, covariate)`` for the packed fixed-effect vector.

    ``group`` is one of ``alpha_g``, ``alpha_f``, ``beta``; component and
    covariate indices are 1-based for reporting.
    """
    labels = []
    for g in range(spec.kg):
        for u in range(spec.pu):
            labels.append(("alpha_g", g + 1, u + 1))
    for k in range(spec.kf):
        for u in range(spec.pu):
            labels.append(("alpha_f", k + 1, u + 1))
        for w in range(spec.pw):
            labels.append(("beta", k + 1, w + 1))
    return labels
