"""Reference aggregators: averaging, majority vote and Dawid-Skene."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, logsumexp

from .dataio import ScoreMatrix
from .errors import InputError, NumericalError

log = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 4.5


@dataclass(frozen=True)
class BaselineOutput:
    scores: np.ndarray
    method: str
    info: dict = field(default_factory=dict)


def _values(m) -> np.ndarray:
    x = m.values if isinstance(m, ScoreMatrix) else np.asarray(m, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    return x


def avg(m) -> BaselineOutput:
    """Per-item mean of the raw judge scores."""
    return BaselineOutput(_values(m).mean(axis=1), "avg")


def _rounded_mode(x: np.ndarray) -> np.ndarray:
    r = np.rint(x).astype(np.int64)
    lo = r.min()
    width = int(r.max() - lo) + 1
    if width > 10000:
        raise InputError("rounded scores span more than 10000 grid values; "
                         "majority vote needs a coarse integer scale")
    counts = np.zeros((x.shape[0], width), dtype=np.int64)
    np.add.at(counts, (np.repeat(np.arange(x.shape[0]), x.shape[1]), (r - lo).ravel()), 1)
    grid = np.arange(width) + lo
    dist = np.abs(grid[None, :] - x.mean(axis=1, keepdims=True))
    dist[counts < counts.max(axis=1, keepdims=True)] = np.inf
    return grid[np.argmin(dist, axis=1)].astype(float)


def votes(m, threshold=None) -> np.ndarray:
    """0/1 votes: the values themselves if already binary, else ``score > threshold``.

    ``threshold`` may be a scalar or one value per judge.
    """
    x = _values(m)
    if threshold is None and np.isin(x, (0.0, 1.0)).all():
        return x.astype(int)
    thr = DEFAULT_THRESHOLD if threshold is None else np.asarray(threshold, dtype=float)
    return (x > thr).astype(int)


def mv(m, threshold=None, binary: bool | None = None) -> BaselineOutput:
    """Majority vote.

    For scoring tasks the per-item mode of the scores rounded to integers is
    returned, ties going to the value closest to the item mean. For binary
    decisions (``binary=True``, a ``threshold``, or a ScoreMatrix whose task
    is binary) each judge votes ``score > threshold`` and an exact tie goes
    to the positive class.
    """
    x = _values(m)
    if binary is None:
        binary = threshold is not None or (isinstance(m, ScoreMatrix) and m.task_kind == "binary")
    if not binary:
        return BaselineOutput(_rounded_mode(x), "mv", {"rule": "rounded_mode"})
    v = votes(x, threshold)
    ones = v.sum(axis=1)
    zeros = v.shape[1] - ones
    ties = ones == zeros
    if ties.any():
        warnings.warn(f"{int(ties.sum())} majority-vote tie(s) resolved to the positive class",
                      RuntimeWarning, stacklevel=2)
    labels = (ones >= zeros).astype(float)
    return BaselineOutput(labels, "mv", {"rule": "threshold", "ties": int(ties.sum())})


@dataclass(frozen=True)
class DawidSkeneFit:
    posterior: np.ndarray       # P(Y=1 | votes)
    prior: float
    sensitivity: np.ndarray     # P(vote=1 | Y=1) per judge
    specificity: np.ndarray     # P(vote=0 | Y=0) per judge
    log_likelihood: tuple[float, ...]
    n_iter: int
    converged: bool

    def error_rates(self) -> tuple[np.ndarray, np.ndarray]:
        """(false positive rate, false negative rate) per judge."""
        return 1.0 - self.specificity, 1.0 - self.sensitivity


def _ds_objective(v, prior, sens, spec, smooth):
    log1 = np.log(prior) + v @ np.log(sens) + (1 - v) @ np.log1p(-sens)
    log0 = np.log1p(-prior) + v @ np.log1p(-spec) + (1 - v) @ np.log(spec)
    both = np.stack([log0, log1], axis=1)
    ll = float(logsumexp(both, axis=1).sum())
    # Beta(1 + smooth, 1 + smooth) priors keep rates off the boundary; EM is
    # monotone in the penalized objective
    for q in (sens, spec, np.array([prior])):
        ll += smooth * float(np.sum(np.log(q) + np.log1p(-q)))
    return ll, expit(log1 - log0)


def dawid_skene(m, max_iter: int = 500, tol: float = 1e-6, smooth: float = 0.01,
                threshold=None) -> BaselineOutput:
    """Two-class Dawid-Skene EM with one sensitivity and one specificity per judge.

    Posteriors start from the majority vote, which also fixes which class is
    called positive.
    """
    v = votes(m, threshold).astype(float)
    if not np.isin(v, (0.0, 1.0)).all():
        raise InputError("Dawid-Skene needs binary votes")
    n, p = v.shape
    with warnings.catch_warnings():
        # MV ties only seed the EM here; they start at 0.5 instead
        warnings.simplefilter("ignore", RuntimeWarning)
        post = mv(v, binary=True).scores.copy() if p > 1 else v[:, 0].copy()
    post = np.where(v.sum(axis=1) * 2 == p, 0.5, post)
    trace: list[float] = []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        w1, w0 = post.sum(), (1 - post).sum()
        prior = (w1 + smooth) / (n + 2 * smooth)
        sens = (post @ v + smooth) / (w1 + 2 * smooth)
        spec = ((1 - post) @ (1 - v) + smooth) / (w0 + 2 * smooth)
        ll, new_post = _ds_objective(v, prior, sens, spec, smooth)
        if trace and ll < trace[-1] - 1e-8 * max(1.0, abs(trace[-1])):
            raise NumericalError(f"Dawid-Skene objective decreased at iteration {it}")
        trace.append(ll)
        change = float(np.max(np.abs(new_post - post)))
        post = new_post
        if change < tol:
            converged = True
            break
    fit = DawidSkeneFit(post, float(prior), sens, spec, tuple(trace), it, converged)
    return BaselineOutput((post > 0.5).astype(float), "ds", {"fit": fit})
