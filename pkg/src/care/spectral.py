"""Spectral path: latent factors of the low-rank part and quality aggregation."""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np
from scipy.stats import spearmanr

from .errors import InputError, NumericalError

log = logging.getLogger(__name__)

EIGEN_THRESHOLD = 1e-8
RULES = ("leading", "balanced", "anchor")
WEIGHT_MODES = ("plain", "subtracted")


@dataclass(frozen=True)
class LatentFactors:
    """Eigenpairs of the low-rank component, largest first.

    ``quality_index`` is zero-based; ``None`` until symmetry breaking.
    """

    eigvals: np.ndarray
    eigvecs: np.ndarray
    quality_index: int | None = None
    weights: np.ndarray | None = None

    @property
    def h(self) -> int:
        return self.eigvals.shape[0]


@dataclass(frozen=True)
class QualityEstimates:
    scores: np.ndarray
    calibration: tuple[float, float] = (1.0, 0.0)
    raw: np.ndarray | None = None


def canonical_sign(v: np.ndarray) -> np.ndarray:
    """Flip ``v`` so its entries sum to a nonnegative number.

    Exact ties fall back to making the largest-magnitude entry positive.
    """
    total = v.sum()
    scale = np.abs(v).sum()
    if abs(total) <= 1e-12 * max(scale, 1e-300):
        return v if v[np.argmax(np.abs(v))] >= 0 else -v
    return v if total > 0 else -v


def extract_factors(d, threshold: float = EIGEN_THRESHOLD) -> LatentFactors:
    """Eigen-decompose ``L`` (a matrix or anything with an ``l`` attribute)."""
    l = np.asarray(getattr(d, "l", d), dtype=float)
    vals, vecs = np.linalg.eigh(0.5 * (l + l.T))
    order = np.argsort(vals)[::-1]
    vals, vecs = vals[order], vecs[:, order]
    keep = vals > threshold
    if not keep.any():
        raise NumericalError("no latent structure: the low-rank part is numerically zero; "
                             "increase tau or check the data")
    vecs = np.column_stack([canonical_sign(v) for v in vecs[:, keep].T])
    return LatentFactors(vals[keep], vecs)


def herfindahl(v: np.ndarray) -> float:
    share = v ** 2 / np.sum(v ** 2)
    return float(np.sum(share ** 2))


def break_symmetry(f: LatentFactors, rule: str = "leading", anchors=None) -> LatentFactors:
    """Pick which factor is the quality axis.

    ``leading`` takes the largest eigenvalue. ``balanced`` takes the factor
    whose squared loadings are least concentrated (lowest Herfindahl index).
    ``anchor`` takes the factor whose projections of the anchor items have
    the largest absolute Spearman correlation with the anchor labels;
    ``anchors`` is ``(x, labels)`` with ``x`` in the same coordinates the
    factors were estimated in.
    """
    if rule not in RULES:
        raise InputError(f"unknown symmetry rule {rule!r}; choose from {RULES}")
    if rule == "anchor":
        if anchors is None:
            raise InputError("anchor rule needs (items, labels)")
        x, labels = np.asarray(anchors[0], dtype=float), np.asarray(anchors[1], dtype=float)
        if x.ndim != 2 or x.shape[0] < 2 or x.shape[0] != labels.shape[0]:
            raise InputError("anchor rule needs at least two labeled anchor items")
        if np.ptp(labels) == 0:
            raise InputError("anchor labels are constant")
    if f.h == 1:
        return replace(f, quality_index=0)
    if rule == "leading":
        idx = 0
    elif rule == "balanced":
        idx = int(np.argmin([herfindahl(v) for v in f.eigvecs.T]))
    else:
        proj = x @ f.eigvecs
        rho = []
        for k in range(f.h):
            if np.ptp(proj[:, k]) == 0:
                rho.append(0.0)
            else:
                rho.append(abs(spearmanr(proj[:, k], labels)[0]))
        idx = int(np.argmax(rho))
    return replace(f, quality_index=idx)


def quality_weights(f: LatentFactors, mode: str = "plain") -> LatentFactors:
    """Judge weights from the quality factor.

    ``plain`` uses ``lam* u*``; ``subtracted`` additionally subtracts
    ``lam_i u_i`` for every other factor. Each eigenvector is sign-canonicalized
    first and the result is flipped so its entries sum to >= 0.
    """
    if f.quality_index is None:
        raise InputError("quality factor not identified; call break_symmetry first")
    if mode not in WEIGHT_MODES:
        raise InputError(f"unknown weight mode {mode!r}; choose from {WEIGHT_MODES}")
    k = f.quality_index
    vecs = np.column_stack([canonical_sign(v) for v in f.eigvecs.T])
    w = f.eigvals[k] * vecs[:, k]
    if mode == "subtracted":
        for i in range(f.h):
            if i != k:
                w = w - f.eigvals[i] * vecs[:, i]
    return replace(f, weights=canonical_sign(w))


def affine_to_match(z: np.ndarray, mean: float, std: float) -> tuple[float, float]:
    sz = z.std()
    if sz <= 0:
        raise NumericalError("aggregate score is constant; cannot calibrate")
    a = std / sz
    return float(a), float(mean - a * z.mean())


def aggregate(x, f: LatentFactors | np.ndarray, calib_target=None) -> QualityEstimates:
    """Per-item scores ``w^T x / ||w||_1``, optionally mapped affinely.

    ``calib_target`` is ``(mean, std)`` of the per-item average judge score on
    the original scale; the raw scores are mapped to match those two moments.
    """
    x = np.asarray(getattr(x, "values", x), dtype=float)
    w = f.weights if isinstance(f, LatentFactors) else np.asarray(f, dtype=float)
    if w is None:
        raise InputError("weights not set; call quality_weights first")
    norm = np.abs(w).sum()
    if norm == 0:
        raise NumericalError("all judge weights are zero")
    z = x @ (w / norm)
    if calib_target is None:
        return QualityEstimates(z, (1.0, 0.0), z)
    a, b = affine_to_match(z, *calib_target)
    return QualityEstimates(a * z + b, (a, b), z)
