"""Partial-correlation conditional-independence test.

Both discovery stages use the same test: residualize x and y on the
conditioning matrix (plus an always-present intercept), correlate the
residuals, and convert to a two-sided p-value through the Student-t
distribution with n - 2 - |Z| degrees of freedom.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats


class ParCorrError(Exception):
    pass


class InsufficientSamplesError(ParCorrError):
    """n <= |Z| + 2: no degrees of freedom left for the test."""


class RankDeficientError(ParCorrError):
    """Conditioning columns (plus intercept) are collinear."""


@dataclass(frozen=True)
class ParCorrResult:
    partial_correlation: float
    statistic: float
    p_value: float
    dof: int


def result_from_moments(sxy: float, sxx: float, syy: float, dof: int) -> ParCorrResult:
    """Build a test result from residual cross/auto moments.

    Shared by the direct regression path below and the Gram-matrix path the
    discovery stages use; both reduce to the same residual moments.
    """
    if sxx <= 0.0 or syy <= 0.0:
        # A residual with zero variance carries no evidence either way.
        return ParCorrResult(partial_correlation=0.0, statistic=0.0, p_value=1.0, dof=dof)
    r = float(sxy) / float(np.sqrt(sxx * syy))
    r = max(-1.0, min(1.0, r))
    denom = 1.0 - r * r
    if denom <= 0.0:
        statistic = float(np.inf) if r > 0 else float(-np.inf)
        return ParCorrResult(partial_correlation=r, statistic=statistic, p_value=0.0, dof=dof)
    statistic = r * float(np.sqrt(dof / denom))
    p_value = 2.0 * float(stats.t.sf(abs(statistic), dof))
    return ParCorrResult(partial_correlation=r, statistic=statistic, p_value=p_value, dof=dof)


def parcorr_test(x: np.ndarray, y: np.ndarray, Z: np.ndarray | None = None) -> ParCorrResult:
    """Test x _||_ y given the columns of Z.

    Z may be None or empty (plain correlation with mean removal), a single
    column, or an (n, k) matrix.  Swapping x and y leaves every field
    unchanged, and any affine rescaling of x, y, or a Z column leaves the
    partial correlation unchanged.
    """
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    n = x.shape[0]
    if y.shape[0] != n:
        raise ValueError(f"x and y disagree on sample count: {n} vs {y.shape[0]}")
    if Z is None:
        Zm = np.empty((n, 0))
    else:
        Zm = np.asarray(Z, dtype=float)
        if Zm.ndim == 1:
            Zm = Zm[:, None]
        if Zm.shape[0] != n:
            raise ValueError(f"Z has {Zm.shape[0]} rows, expected {n}")
    k = Zm.shape[1]
    if n <= k + 2:
        raise InsufficientSamplesError(f"need n > |Z| + 2, got n={n}, |Z|={k}")

    design = np.column_stack([np.ones(n), Zm])
    coef, _, rank, _ = np.linalg.lstsq(design, np.column_stack([x, y]), rcond=None)
    if rank < design.shape[1]:
        raise RankDeficientError(f"conditioning set is rank deficient (rank {rank} < {design.shape[1]})")
    resid = np.column_stack([x, y]) - design @ coef
    rx, ry = resid[:, 0], resid[:, 1]
    return result_from_moments(float(rx @ ry), float(rx @ rx), float(ry @ ry), n - 2 - k)
