"""End-to-end CARE estimators: the spectral (SVD) path and the tensor path.

Both paths fit the sparse plus low-rank split on the precision of the
standardized scores. The precision is divided by the mean of its diagonal
first, so the penalty weights are on a scale-free footing.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import moments, partition as part_mod, spectral, splr, tensor
from .dataio import ScoreMatrix, Standardizer, from_array, standardize
from .errors import InputError

log = logging.getLogger(__name__)

SVD_DEFAULTS = {"gamma_n": 1.0, "tau": 0.1}
TENSOR_DEFAULTS = {"gamma_n": 0.05, "tau": 2.0}


def tensor_grid_params(pair) -> dict:
    """Map a tensor grid pair ``(sparse weight, nuclear weight)`` to ``(gamma_n, tau)``.

    The pair weights ``||S||_1`` and ``||L||_*`` separately, so
    ``gamma_n = a`` and ``tau = b / a``.
    """
    a, b = pair
    return {"gamma_n": float(a), "tau": float(b) / float(a)}


def svd_grid_params(gamma_n, tau: float = SVD_DEFAULTS["tau"]) -> dict:
    return {"gamma_n": float(gamma_n), "tau": float(tau)}


def _as_matrix(m) -> ScoreMatrix:
    if isinstance(m, ScoreMatrix):
        return m
    return from_array(np.asarray(m, dtype=float))


@dataclass(frozen=True)
class PrecisionFit:
    standardizer: Standardizer
    theta_scale: float
    decomposition: splr.SplrDecomposition
    ridge: float = 0.0


def fit_precision(m: ScoreMatrix, gamma_n: float, tau: float, *,
                  max_iter: int = 5000, tol: float = 1e-8) -> PrecisionFit:
    xs, st = standardize(m, center=True)
    prec = moments.precision(moments.covariance(xs))
    scale = float(np.mean(np.diag(prec.theta)))
    d = splr.decompose(prec.theta / scale, gamma_n, tau, max_iter=max_iter, tol=tol)
    return PrecisionFit(st, scale, d, prec.ridge)


@dataclass(frozen=True)
class SvdFit:
    precision: PrecisionFit
    factors: spectral.LatentFactors
    calibration: tuple[float, float] | None
    params: dict = field(default_factory=dict)

    @property
    def weights(self) -> np.ndarray:
        return self.factors.weights

    def raw_scores(self, m) -> np.ndarray:
        m = _as_matrix(m)
        z = self.precision.standardizer.transform(m.values)
        return z @ (self.weights / np.abs(self.weights).sum())

    def scores(self, m) -> np.ndarray:
        z = self.raw_scores(m)
        if self.calibration is None:
            return z
        a, b = self.calibration
        return a * z + b


def fit_svd(m, gamma_n: float = SVD_DEFAULTS["gamma_n"], tau: float = SVD_DEFAULTS["tau"],
            rule: str = "leading", weights: str = "plain", calibrate: bool = True,
            anchors=None) -> SvdFit:
    """Fit CARE-SVD.

    ``anchors`` is ``(rows, labels)``: indices into ``m`` (or a score
    matrix) with their quality labels, used only by ``rule="anchor"``.
    """
    m = _as_matrix(m)
    pf = fit_precision(m, gamma_n, tau)
    f = spectral.extract_factors(pf.decomposition)
    anchor_arg = None
    if anchors is not None:
        rows, labels = anchors
        x = rows.values if isinstance(rows, ScoreMatrix) else (
            m.values[np.asarray(rows)] if np.asarray(rows).ndim == 1 else np.asarray(rows))
        anchor_arg = (pf.standardizer.transform(x), labels)
    f = spectral.quality_weights(spectral.break_symmetry(f, rule, anchor_arg), weights)
    calibration = None
    if calibrate:
        avg = m.values.mean(axis=1)
        est = spectral.aggregate(pf.standardizer.transform(m.values), f, (avg.mean(), avg.std()))
        calibration = est.calibration
    return SvdFit(pf, f, calibration, {"gamma_n": gamma_n, "tau": tau, "rule": rule,
                                       "weights": weights, "calibrate": calibrate})


@dataclass(frozen=True)
class TensorFit:
    precision: PrecisionFit | None
    partition: part_mod.TriViewPartition
    cp: tensor.CpComponents
    mixture: tensor.MixtureModel       # in scale-standardized coordinates
    scale: np.ndarray                  # per-judge std used for the tensor moments
    state_rule: str
    params: dict = field(default_factory=dict)

    def transform(self, m) -> np.ndarray:
        return _as_matrix(m).values / self.scale

    def posterior(self, m) -> tensor.PosteriorResult:
        return tensor.posterior(self.transform(m), self.mixture)

    def quality_prob(self, m) -> np.ndarray:
        return self.posterior(m).quality_prob

    @property
    def means(self) -> np.ndarray:
        """State means in the original score units, rows in (q, c) order."""
        return self.mixture.means * self.scale

    @property
    def weights(self) -> np.ndarray:
        return self.mixture.weights


def partition_matrix(s: np.ndarray) -> np.ndarray:
    """Sparse part rescaled to unit diagonal, so ``eps`` is a partial-correlation cut."""
    d = np.sqrt(np.abs(np.diag(s)))
    d = np.where(d > 0, d, 1.0)
    return s / np.outer(d, d)


def fit_tensor(m, gamma_n: float = TENSOR_DEFAULTS["gamma_n"], tau: float = TENSOR_DEFAULTS["tau"],
               *, eps: float = part_mod.DEFAULT_EPS, seed: int = 0,
               partition_restarts: int = part_mod.DEFAULT_RESTARTS, rank: int = 4,
               cp_restarts: int = 16, em_refine: bool = False, partition=None,
               min_view_size: int | None = None, anchor_means=None, l_hat=None,
               cap_rank: bool = True) -> TensorFit:
    """Fit CARE-Tensor.

    Parameters
    ----------
    m : ScoreMatrix
    gamma_n, tau
        SPLR weights; the sparse part drives the view partition and the
        low-rank part supplies the quality axis for state identification.
    partition : TriViewPartition or three index arrays, optional
        Skip the graph-aware partition and use these views.
    min_view_size : int, optional
        Size floor for the graph-aware partition (default ``p // 6``).
    anchor_means : (4, p) array, optional
        Prototype means in original units, rows in (q, c) order. When given,
        components are matched to prototypes instead of ranked along the
        quality axis.
    l_hat : (p, p) array, optional
        Quality-axis matrix to use instead of the fitted low-rank part.
    cap_rank : bool
        Without anchors, lower the CP rank to ``rank(L) + 1`` when that is
        smaller than ``rank``.
    """
    m = _as_matrix(m)
    pf = None
    if partition is None or (anchor_means is None and l_hat is None):
        pf = fit_precision(m, gamma_n, tau)
    if partition is None:
        part = part_mod.partition(partition_matrix(pf.decomposition.s), eps=eps, seed=seed,
                                  restarts=partition_restarts, min_size=min_view_size)
    elif isinstance(partition, part_mod.TriViewPartition):
        part = partition
    else:
        part = part_mod.from_groups(partition)
    if part.p != m.p:
        raise InputError(f"partition covers {part.p} judges, data has {m.p}")

    axis = None
    cp_rank = rank
    if anchor_means is None:
        axis = pf.decomposition.l if l_hat is None else np.asarray(l_hat, dtype=float)
        if cap_rank:
            # k distinct state means span at most a (k-1)-dimensional affine
            # space, so more than rank(L) + 1 components are not identifiable
            h = int(np.sum(np.linalg.eigvalsh(axis) > spectral.EIGEN_THRESHOLD))
            cp_rank = max(2, min(rank, h + 1))
            if cp_rank < rank:
                log.info("CP rank reduced from %d to %d (rank of L is %d)", rank, cp_rank, h)

    xs, st = standardize(m, center=False)
    t = moments.third_moment(xs, part)
    cp = tensor.cp_decompose(t, rank=cp_rank, restarts=cp_restarts, seed=seed)
    view_means, pi = tensor.recover_mixture(cp, moments.cross_moments(xs, part))
    means = tensor.assemble_means(view_means, part)

    if anchor_means is not None:
        if cp_rank != 4:
            raise InputError("anchor alignment expects rank 4")
        anchors = np.asarray(anchor_means, dtype=float) / st.std
        means, pi, _ = tensor.align_anchors(means, pi, anchors)
        rule = "anchors"
    else:
        if cp_rank > 4:
            raise InputError("quality-axis identification supports at most 4 components; "
                             "supply anchors")
        # the axis lives in centered standardized coordinates; the tensor means
        # differ from those by a per-judge offset, which shifts all scores equally
        states = tensor.identify_states(means, axis)
        means, pi = tensor.to_canonical(means, pi, states)
        rule = "quality_axis"
    mix = tensor.MixtureModel(means, tensor.project_weights(pi))
    mix = tensor.fit_within_covariance(xs.values, mix, em_refine=em_refine)
    params = {"gamma_n": gamma_n, "tau": tau, "eps": eps, "seed": seed, "rank": rank,
              "cp_rank": cp_rank, "cp_restarts": cp_restarts, "em_refine": em_refine,
              "min_view_size": min_view_size}
    return TensorFit(pf, part, cp, mix, st.std, rule, params)
