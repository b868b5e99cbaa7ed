"""Second- and third-order moment estimators."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .dataio import ScoreMatrix
from .errors import InputError, NumericalError

log = logging.getLogger(__name__)

MIN_EIGENVALUE = 1e-10
RIDGE_LADDER = (0.0,) + tuple(10.0 ** k for k in range(-10, -1))


@dataclass(frozen=True)
class CovarianceEstimate:
    sigma: np.ndarray
    ridge: float = 0.0


@dataclass(frozen=True)
class PrecisionEstimate:
    theta: np.ndarray
    ridge: float = 0.0


@dataclass(frozen=True)
class ThirdOrderTensor:
    t: np.ndarray
    group_sizes: tuple[int, int, int]


def _values(m) -> np.ndarray:
    return m.values if isinstance(m, ScoreMatrix) else np.asarray(m, dtype=float)


def covariance(m: ScoreMatrix | np.ndarray, center: bool = True) -> CovarianceEstimate:
    """Sample covariance with the 1/n normalization."""
    x = _values(m)
    if x.shape[0] < 2:
        raise InputError("covariance needs at least two rows")
    if center:
        x = x - x.mean(axis=0)
    sigma = x.T @ x / x.shape[0]
    return CovarianceEstimate(0.5 * (sigma + sigma.T))


def precision(c: CovarianceEstimate | np.ndarray) -> PrecisionEstimate:
    """Invert the covariance, escalating a ridge by decades up to 1e-2 if needed."""
    sigma = c.sigma if isinstance(c, CovarianceEstimate) else np.asarray(c, dtype=float)
    base = c.ridge if isinstance(c, CovarianceEstimate) else 0.0
    eye = np.eye(sigma.shape[0])
    lo = np.linalg.eigvalsh(sigma)[0]
    for ridge in RIDGE_LADDER:
        if lo + ridge > MIN_EIGENVALUE:
            if ridge > 0:
                log.info("precision: ridge escalated to %.0e (min eigenvalue %.3e)", ridge, lo)
            theta = np.linalg.inv(sigma + ridge * eye)
            return PrecisionEstimate(0.5 * (theta + theta.T), base + ridge)
    raise NumericalError(f"covariance singular even with ridge {RIDGE_LADDER[-1]:g} "
                         f"(min eigenvalue {lo:.3e})")


def _views(x: np.ndarray, groups):
    groups = [np.asarray(g, dtype=int) for g in groups]
    if len(groups) != 3 or any(g.size == 0 for g in groups):
        raise InputError("third moment needs three nonempty judge groups")
    return [x[:, g] for g in groups]


def third_moment(m: ScoreMatrix | np.ndarray, part) -> ThirdOrderTensor:
    """Uncentered cross-moment ``(1/n) sum_i x1_i (x) x2_i (x) x3_i`` over three views.

    ``part`` is a ``TriViewPartition`` or any sequence of three index arrays.
    Columns are used as given (no centering).
    """
    x = _values(m)
    x1, x2, x3 = _views(x, getattr(part, "groups", part))
    t = np.einsum("ia,ib,ic->abc", x1, x2, x3, optimize=True) / x.shape[0]
    return ThirdOrderTensor(t, (x1.shape[1], x2.shape[1], x3.shape[1]))


def cross_moments(m: ScoreMatrix | np.ndarray, part) -> dict[tuple[int, int], np.ndarray]:
    """Uncentered pairwise view moments ``E[x_a x_b^T]`` for the three view pairs."""
    x = _values(m)
    views = _views(x, getattr(part, "groups", part))
    n = x.shape[0]
    return {(a, b): views[a].T @ views[b] / n for a, b in ((0, 1), (0, 2), (1, 2))}
