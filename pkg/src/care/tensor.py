"""Tensor path: CP decomposition of the three-view moment and mixture posteriors.

States are indexed ``k = 2 * q + c`` so the canonical order is
``(q, c) = 00, 01, 10, 11``.
"""
from __future__ import annotations

import itertools
import logging
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.special import logsumexp

from .errors import InputError, NumericalError

log = logging.getLogger(__name__)

STATES = ((0, 0), (0, 1), (1, 0), (1, 1))
WEIGHT_FLOOR = 1e-4
COV_RIDGE = 1e-6


@dataclass(frozen=True)
class CpComponents:
    """``T ~ sum_r weights[r] * a_r (x) b_r (x) c_r`` with unit-norm factor columns."""

    weights: np.ndarray
    factors: tuple[np.ndarray, np.ndarray, np.ndarray]
    fit: float
    n_iter: int = 0
    restart: int = 0

    @property
    def rank(self) -> int:
        return self.weights.shape[0]

    def full(self) -> np.ndarray:
        a, b, c = self.factors
        return np.einsum("r,ir,jr,kr->ijk", self.weights, a, b, c)


@dataclass(frozen=True)
class MixtureModel:
    """Four-state Gaussian mixture with shared covariance; row ``k`` is state ``STATES[k]``."""

    means: np.ndarray
    weights: np.ndarray
    cov: np.ndarray | None = None

    def quality_states(self) -> np.ndarray:
        return np.array([q for q, _ in STATES[: self.means.shape[0]]]) == 1


@dataclass(frozen=True)
class PosteriorResult:
    responsibilities: np.ndarray
    quality_prob: np.ndarray


def _tensor(t) -> np.ndarray:
    return np.asarray(getattr(t, "t", t), dtype=float)


def _khatri_rao(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Column-wise Kronecker product; leading axes are batch axes."""
    return (u[..., :, None, :] * v[..., None, :, :]).reshape(
        *u.shape[:-2], u.shape[-2] * v.shape[-2], u.shape[-1])


def _solve_gram(m: np.ndarray, gram: np.ndarray) -> np.ndarray:
    # m @ inv(gram) with a tiny relative ridge guarding against collinear columns
    r = gram.shape[-1]
    tr = np.trace(gram, axis1=-2, axis2=-1)[..., None, None]
    ridge = 1e-12 * np.maximum(tr, 1e-300) / r * np.eye(r)
    return np.swapaxes(np.linalg.solve(gram + ridge, np.swapaxes(m, -1, -2)), -1, -2)


def _gram(u: np.ndarray) -> np.ndarray:
    return np.swapaxes(u, -1, -2) @ u


def _als(t: np.ndarray, init, max_iter: int, tol: float):
    """Batched ALS: ``init`` holds three arrays of shape ``(restarts, dim, rank)``.

    Every restart stops on its own once its relative fit changes by less
    than ``tol``; finished restarts are frozen, so each result is exactly
    what a lone run from that start would give.
    """
    a, b, c = (np.array(f, dtype=float) for f in init)
    i, j, k = t.shape
    t1 = t.reshape(i, j * k)
    t2 = t.transpose(1, 0, 2).reshape(j, i * k)
    t3 = t.transpose(2, 0, 1).reshape(k, i * j)
    norm_t = np.linalg.norm(t)
    n_starts = a.shape[0]
    fit_prev = np.full(n_starts, np.inf)
    active = np.ones(n_starts, dtype=bool)
    iters = np.zeros(n_starts, dtype=int)
    lam = np.ones((n_starts, a.shape[-1]))
    for it in range(1, max_iter + 1):
        idx = np.flatnonzero(active)
        aa, bb, cc = a[idx], b[idx], c[idx]
        aa, _ = _normalize_columns(_solve_gram(t1 @ _khatri_rao(bb, cc), _gram(bb) * _gram(cc)))
        bb, _ = _normalize_columns(_solve_gram(t2 @ _khatri_rao(aa, cc), _gram(aa) * _gram(cc)))
        cc, ll = _normalize_columns(_solve_gram(t3 @ _khatri_rao(aa, bb), _gram(aa) * _gram(bb)))
        recon = (cc * ll[:, None, :]) @ np.swapaxes(_khatri_rao(aa, bb), -1, -2)
        fit = np.linalg.norm(t3 - recon, axis=(1, 2)) / norm_t
        a[idx], b[idx], c[idx], lam[idx] = aa, bb, cc, ll
        iters[idx] = it
        bad = ~np.isfinite(fit)
        done = (np.abs(fit_prev[idx] - fit) < tol) | bad
        fit_prev[idx] = fit
        active[idx[done]] = False
        if not active.any():
            break
    return (a, b, c), iters


def _normalize_columns(m: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(m, axis=-2)
    norms = np.where(norms > 0, norms, 1.0)
    return m / norms[..., None, :], norms


def _extract_weights(t: np.ndarray, factors) -> tuple[np.ndarray, tuple]:
    a, b, c = (_normalize_columns(f)[0] for f in factors)
    gram = (a.T @ a) * (b.T @ b) * (c.T @ c)
    rhs = np.einsum("ijk,ir,jr,kr->r", t, a, b, c)
    lam = np.linalg.lstsq(gram, rhs, rcond=None)[0]
    neg = lam < 0
    a = a * np.where(neg, -1.0, 1.0)
    return np.abs(lam), (a, b, c)


def hosvd_start(t: np.ndarray, rank: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Leading singular vectors of each unfolding, padded with Gaussian columns."""
    out = []
    for mode in range(3):
        unf = np.moveaxis(t, mode, 0).reshape(t.shape[mode], -1)
        u = np.linalg.svd(unf, full_matrices=False)[0][:, :rank]
        if u.shape[1] < rank:
            u = np.hstack([u, rng.standard_normal((t.shape[mode], rank - u.shape[1]))])
        out.append(u)
    return out


def jennrich_start(t: np.ndarray, rank: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Simultaneous-diagonalization start.

    Modes 1 and 2 are compressed onto their leading ``rank`` singular
    vectors, two random contractions of mode 3 are diagonalized jointly,
    and the mode-3 factor is the least-squares fit given the other two.
    Exact for a noiseless tensor whose first two factor matrices have full
    column rank.
    """
    i, j, k = t.shape
    u = np.linalg.svd(t.reshape(i, -1), full_matrices=False)[0][:, :rank]
    v = np.linalg.svd(t.transpose(1, 0, 2).reshape(j, -1), full_matrices=False)[0][:, :rank]
    g = np.einsum("ijk,ia,jb->abk", t, u, v)
    g1, g2 = g @ rng.standard_normal(k), g @ rng.standard_normal(k)
    va, ea = np.linalg.eig(g1 @ np.linalg.pinv(g2))
    vb, eb = np.linalg.eig(g1.T @ np.linalg.pinv(g2.T))
    # both eigenproblems share eigenvalues; sorting pairs the columns up
    a = u @ np.real(ea[:, np.argsort(np.real(va), kind="stable")])
    b = v @ np.real(eb[:, np.argsort(np.real(vb), kind="stable")])
    a = np.hstack([a, rng.standard_normal((i, rank - a.shape[1]))])
    b = np.hstack([b, rng.standard_normal((j, rank - b.shape[1]))])
    c = _solve_gram(t.transpose(2, 0, 1).reshape(k, -1) @ _khatri_rao(a, b), _gram(a) * _gram(b))
    return [a, b, c]


def cp_decompose(t, rank: int = 4, restarts: int = 16, seed: int = 0,
                 max_iter: int = 1000, tol: float = 1e-9, algebraic: bool = True) -> CpComponents:
    """Rank-``rank`` CP decomposition by alternating least squares.

    Every restart starts from standard-normal factors drawn from one seeded
    generator. With ``algebraic`` two deterministic starts go first: a
    simultaneous-diagonalization (Jennrich) start and the leading singular
    vectors of the three unfoldings; ALS swamps on nearly collinear
    components are common enough that random starts alone miss the optimum.
    ``CpComponents.restart`` indexes the combined list of starts.

    The start with the smallest relative reconstruction error wins
    (earliest on ties). Factor
    columns are returned with unit norm, the magnitudes are re-fitted by
    least squares against ``t``, and a negative magnitude is made positive
    by flipping the first-view column.
    """
    t = _tensor(t)
    if t.ndim != 3:
        raise InputError(f"expected a 3-way tensor, got {t.ndim} dimensions")
    if rank < 1:
        raise InputError(f"CP rank must be positive, got {rank}")
    if rank > min(t.shape):
        log.info("CP rank %d exceeds the smallest view size %d", rank, min(t.shape))
    norm_t = np.linalg.norm(t)
    if norm_t == 0:
        raise NumericalError("moment tensor is identically zero")
    rng = np.random.default_rng(seed)
    starts = [[rng.standard_normal((dim, rank)) for dim in t.shape]
              for _ in range(max(1, restarts))]
    if algebraic:
        alg_rng = np.random.default_rng([seed, 1])
        try:
            first = jennrich_start(t, rank, alg_rng)
        except np.linalg.LinAlgError:
            first = [alg_rng.standard_normal((dim, rank)) for dim in t.shape]
        starts[:0] = [first, hosvd_start(t, rank, alg_rng)]
    init = [np.stack([s_[m] for s_ in starts]) for m in range(3)]
    with np.errstate(all="ignore"):
        factors, iters = _als(t, init, max_iter, tol)
    best = None
    for r in range(len(starts)):
        f = [factors[m][r] for m in range(3)]
        if not all(np.all(np.isfinite(x)) for x in f):
            continue
        lam, f = _extract_weights(t, f)
        fit = float(np.linalg.norm(t - np.einsum("r,ir,jr,kr->ijk", lam, *f)) / norm_t)
        if best is None or fit < best.fit:
            best = CpComponents(lam, f, fit, int(iters[r]), r)
    if best is None or best.fit > 0.999:
        raise NumericalError("CP decomposition failed on every restart; "
                             "try more samples or different (gamma_n, tau)")
    return best


def recover_mixture(cp: CpComponents, pair_moments: dict) -> tuple[tuple[np.ndarray, ...], np.ndarray]:
    """Resolve the CP scaling ambiguity into per-view means and mixing weights.

    ``pair_moments`` maps view pairs ``(0, 1), (0, 2), (1, 2)`` to the
    uncentered cross moments ``E[x_a x_b^T]``. Under conditional independence
    these equal ``sum_r pi_r mu_a,r mu_b,r^T``, which pins down each view's
    scale per component. Returns ``((mu1, mu2, mu3), pi)`` with view means as
    columns and ``pi`` floored at ``1e-4`` and renormalized.
    """
    a, b, c = cp.factors
    lam = cp.weights
    views = (a, b, c)
    kappa = {}
    for i, j in ((0, 1), (0, 2), (1, 2)):
        u, v = views[i], views[j]
        gram = (u.T @ u) * (v.T @ v)
        rhs = np.einsum("ir,ij,jr->r", u, pair_moments[(i, j)], v)
        kappa[(i, j)] = np.linalg.lstsq(gram, rhs, rcond=None)[0]
    k12, k13, k23 = kappa[(0, 1)], kappa[(0, 2)], kappa[(1, 2)]
    tiny = 1e-12 * max(1.0, float(np.max(np.abs(lam))))
    safe = lambda x: np.where(np.abs(x) > tiny, x, np.copysign(tiny, x + 0.0))  # noqa: E731
    alpha, beta, gamma = lam / safe(k23), lam / safe(k13), lam / safe(k12)
    pi = k12 * k13 * k23 / safe(lam) ** 2
    return (a * alpha, b * beta, c * gamma), project_weights(pi)


def project_weights(pi) -> np.ndarray:
    pi = np.maximum(np.nan_to_num(np.asarray(pi, dtype=float), nan=0.0), WEIGHT_FLOOR)
    return pi / pi.sum()


def assemble_means(view_means, part) -> np.ndarray:
    """Place each view's mean block at its judges' original indices.

    ``view_means`` holds three ``(p_l, R)`` arrays; returns ``(R, p)``.
    """
    groups = getattr(part, "groups", part)
    for vm, g in zip(view_means, groups):
        if vm.shape[0] != len(g):
            raise InputError(f"view block has {vm.shape[0]} rows for a group of {len(g)} judges")
    p = sum(len(g) for g in groups)
    r = view_means[0].shape[1]
    means = np.empty((r, p))
    for vm, g in zip(view_means, groups):
        means[:, np.asarray(g, dtype=int)] = vm.T
    return means


def top_eigenvector(l_hat) -> np.ndarray:
    l_hat = np.asarray(getattr(l_hat, "l", l_hat), dtype=float)
    vals, vecs = np.linalg.eigh(0.5 * (l_hat + l_hat.T))
    if vals[-1] <= 0:
        raise NumericalError("low-rank component is zero; cannot define the quality axis")
    v = vecs[:, -1]
    return v if v.sum() >= 0 else -v


def identify_states(means, l_hat) -> np.ndarray:
    """Assign each component a state index ``k = 2 q + c`` along the quality axis.

    The axis ``v`` is the top eigenvector of ``L`` with entries summing to a
    nonnegative number, and components are scored by ``s_r = v^T mu_r``.
    With four components the two highest scores are ``Q=1``; with fewer,
    ``Q`` splits at the largest gap between consecutive scores. Within a
    ``Q`` group the lower score gets ``c=0``.
    """
    means = np.asarray(means, dtype=float)
    r = means.shape[0]
    if not 2 <= r <= 4:
        raise InputError(f"state identification needs 2 to 4 components, got {r}")
    v = top_eigenvector(l_hat)
    s = means @ v
    order = np.argsort(s, kind="stable")
    ss = s[order]
    if np.any(np.diff(ss) <= 1e-12 * max(1.0, np.abs(ss).max())):
        warnings.warn("tied component scores on the quality axis; "
                      "breaking ties by component index", RuntimeWarning, stacklevel=2)
    cut = 2 if r == 4 else int(np.argmax(np.diff(ss))) + 1
    states = np.empty(r, dtype=int)
    for rank_pos, comp in enumerate(order):
        q = int(rank_pos >= cut)
        c = rank_pos - (cut if q else 0)
        states[comp] = 2 * q + c
    return states


def to_canonical(means, weights, states) -> tuple[np.ndarray, np.ndarray]:
    """Arrange components as four rows in state order.

    A ``Q`` group represented by a single component is split into two
    identical rows sharing its weight, which leaves the posterior of ``Q``
    unchanged.
    """
    means = np.asarray(means, dtype=float)
    weights = np.asarray(weights, dtype=float)
    out_m = np.empty((4, means.shape[1]))
    out_w = np.empty(4)
    for q in (0, 1):
        members = [int(np.flatnonzero(states == 2 * q + c)[0])
                   for c in (0, 1) if np.any(states == 2 * q + c)]
        if not members:
            raise NumericalError(f"no component identified with Q={q}")
        if len(members) == 1:
            out_m[2 * q:2 * q + 2] = means[members[0]]
            out_w[2 * q:2 * q + 2] = weights[members[0]] / 2
        else:
            out_m[2 * q:2 * q + 2] = means[members]
            out_w[2 * q:2 * q + 2] = weights[members]
    return out_m, out_w / out_w.sum()


def align_anchors(means, weights, anchor_means):
    """Permutation of components closest (squared l2) to four anchor prototypes.

    Returns ``(means[rho], weights[rho], rho)`` so row ``k`` matches anchor ``k``.
    """
    means = np.asarray(means, dtype=float)
    anchor_means = np.asarray(anchor_means, dtype=float)
    if anchor_means.shape != means.shape:
        raise InputError(f"anchor prototypes {anchor_means.shape} do not match means {means.shape}")
    cost = ((means[:, None, :] - anchor_means[None, :, :]) ** 2).sum(axis=2)
    best, best_rho = np.inf, None
    for rho in itertools.permutations(range(means.shape[0])):
        total = cost[list(rho), range(means.shape[0])].sum()
        if total < best:
            best, best_rho = total, np.array(rho)
    return means[best_rho], np.asarray(weights)[best_rho], best_rho


def _log_gaussians(x: np.ndarray, means: np.ndarray, cov: np.ndarray) -> np.ndarray:
    p = x.shape[1]
    eye = np.eye(p)
    scale = max(1.0, float(np.trace(cov)) / p)
    for ridge in (0.0,) + tuple(10.0 ** k for k in range(-12, -1)):
        try:
            factor = cho_factor(cov + ridge * scale * eye, lower=True)
            break
        except np.linalg.LinAlgError:
            continue
    else:
        raise NumericalError("within-state covariance is not positive definite")
    logdet = 2.0 * np.sum(np.log(np.diag(factor[0])))
    out = np.empty((x.shape[0], means.shape[0]))
    for k, mu in enumerate(means):
        d = x - mu
        maha = np.einsum("ij,ji->i", d, cho_solve(factor, d.T))
        out[:, k] = -0.5 * (maha + logdet + p * np.log(2 * np.pi))
    return out


def responsibilities(x, means, weights, cov) -> np.ndarray:
    x = np.asarray(getattr(x, "values", x), dtype=float)
    logp = np.log(np.asarray(weights, dtype=float)) + _log_gaussians(x, np.asarray(means), cov)
    return np.exp(logp - logsumexp(logp, axis=1, keepdims=True))


def fit_within_covariance(x, mix: MixtureModel, em_refine: bool = False) -> MixtureModel:
    """Pooled within-state covariance from nearest-mean hard assignment, plus a 1e-6 ridge.

    States sharing an identical mean (a component duplicated across both
    confounder values) count as one. If some distinct mean receives no items
    the global covariance is used instead. ``em_refine`` runs one soft pass
    updating only the covariance.
    """
    x = np.asarray(getattr(x, "values", x), dtype=float)
    means = np.asarray(mix.means, dtype=float)
    n, p = x.shape
    distinct = np.unique(means, axis=0)
    dist = ((x[:, None, :] - distinct[None, :, :]) ** 2).sum(axis=2)
    assign = np.argmin(dist, axis=1)
    if np.bincount(assign, minlength=distinct.shape[0]).min() == 0:
        warnings.warn("a mixture state received no items; using the global covariance",
                      RuntimeWarning, stacklevel=2)
        resid = x - x.mean(axis=0)
    else:
        resid = x - distinct[assign]
    cov = resid.T @ resid / n + COV_RIDGE * np.eye(p)
    if em_refine:
        resp = responsibilities(x, means, mix.weights, cov)
        cov = COV_RIDGE * np.eye(p)
        for k, mu in enumerate(means):
            d = x - mu
            cov += (d * resp[:, k:k + 1]).T @ d / n
    return MixtureModel(means, np.asarray(mix.weights, dtype=float), 0.5 * (cov + cov.T))


def posterior(x, mix: MixtureModel) -> PosteriorResult:
    """Posterior state probabilities ``alpha_qc`` and ``P(Q=1 | x)``, computed in log space."""
    if mix.cov is None:
        raise InputError("mixture covariance not set; call fit_within_covariance first")
    resp = responsibilities(x, mix.means, mix.weights, mix.cov)
    q = mix.quality_states()
    return PosteriorResult(resp, np.clip(resp[:, q].sum(axis=1), 0.0, 1.0))
