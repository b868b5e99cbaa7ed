"""Seeded synthetic generators for the benchmark experiments and theory checks.

Every generator draws from sub-streams keyed by ``(experiment, seed, purpose)``
so that, e.g., the noise draw does not shift when the label draw changes.
"""
from __future__ import annotations

import logging
import zlib
from dataclasses import dataclass, field

import numpy as np

from .dataio import ScoreMatrix, from_array
from .errors import InputError
from .partition import TriViewPartition, from_groups

log = logging.getLogger(__name__)

# state order used by the generators' mean tables: (c, q) = 00, 01, 10, 11
CQ_STATES = ((0, 0), (0, 1), (1, 0), (1, 1))


def stream(experiment: str, seed: int, purpose: str) -> np.random.Generator:
    key = [zlib.crc32(experiment.encode()), int(seed) & 0xFFFFFFFF,
           zlib.crc32(purpose.encode())]
    return np.random.default_rng(np.random.SeedSequence(key))


def _cq_to_qc(means_cq: np.ndarray) -> np.ndarray:
    """Reorder rows from (c, q) order to the mixture's (q, c) order."""
    return means_cq[[0, 2, 1, 3]]


def _interpolate(table: np.ndarray, g: float) -> np.ndarray:
    """Move the C=1 rows of a (c, q)-ordered table toward the C=0 rows."""
    out = np.array(table, dtype=float, copy=True)
    out[..., 2:, :] = out[..., :2, :] + g * (out[..., 2:, :] - out[..., :2, :])
    return out


@dataclass(frozen=True)
class SyntheticData:
    scores: ScoreMatrix
    q: np.ndarray
    c: np.ndarray
    means: np.ndarray          # (4, p) in (q, c) state order
    weights: np.ndarray        # (4,) in (q, c) state order
    partition: TriViewPartition | None = None
    extra: dict = field(default_factory=dict)


def _default_regime_a_tables() -> np.ndarray:
    """Three 4x5 conditional-mean tables (rows in (c, q) order).

    View 1 follows quality with a mild confounder shift. View 2 tracks
    quality weakly and is pushed up by the confounder. View 3's quality
    effect reverses sign under the confounder. Per-judge baselines and small
    interactions keep each view's four state means linearly independent.
    """
    mult = np.array([[1.0, 0.8, 1.2, 0.9, 1.1],
                     [1.1, 0.9, 1.0, 1.2, 0.8],
                     [0.9, 1.2, 0.8, 1.0, 1.1]])
    base = np.array([[0.3, -0.2, 0.1, 0.4, -0.3],
                     [-0.1, 0.3, -0.4, 0.2, 0.1],
                     [0.2, 0.1, -0.3, -0.2, 0.4]])
    wiggle = np.array([[0.1, -0.1, 0.0, 0.1, -0.1],
                       [0.0, 0.1, -0.1, -0.1, 0.1],
                       [-0.1, 0.0, 0.1, -0.1, 0.1]])
    qa = (0.5, 0.1, 0.4)          # half the quality gap per view
    shift = (-0.3, 0.5, 0.5)      # confounder shift per view
    flip = (0.0, 0.0, 2.0)        # multiple of the quality effect removed under C=1
    tables = np.empty((3, 4, 5))
    for v in range(3):
        a = qa[v] * mult[v]
        b = shift[v] * mult[(v + 2) % 3]
        d = -flip[v] * a + wiggle[v]
        for k, (c, q) in enumerate(CQ_STATES):
            tables[v, k] = base[v] + a * (2 * q - 1) + b * c + d * (2 * q - 1) * c
    return tables


@dataclass(frozen=True)
class RegimeAConfig:
    n: int = 50000
    g: float = 1.0
    probs: tuple[float, float, float, float] = (0.2, 0.3, 0.3, 0.2)  # over (c, q)
    noise_var: float = 0.01
    seed: int = 0
    tables: np.ndarray | None = None  # (views, 4, judges per view), (c, q) rows

    def resolved_tables(self) -> np.ndarray:
        t = _default_regime_a_tables() if self.tables is None else np.asarray(self.tables, float)
        if t.ndim != 3 or t.shape[1] != 4:
            raise InputError(f"regime A tables must have shape (views, 4, judges), got {t.shape}")
        return t


def _check_probs(probs) -> np.ndarray:
    probs = np.asarray(probs, dtype=float)
    if probs.shape != (4,) or np.any(probs < 0) or abs(probs.sum() - 1) > 1e-12:
        raise InputError(f"state probabilities must be 4 nonnegative numbers summing to 1, got {probs}")
    return probs


def _sample_mixture(name, seed, n, probs_cq, means_cq, noise_var, names):
    states = stream(name, seed, "states").choice(4, size=n, p=probs_cq)
    p = means_cq.shape[1]
    noise = stream(name, seed, "noise").standard_normal((n, p)) * np.sqrt(noise_var)
    x = means_cq[states] + noise
    c = np.array([CQ_STATES[s][0] for s in range(4)])[states]
    q = np.array([CQ_STATES[s][1] for s in range(4)])[states]
    return from_array(x, names, truth=q.astype(float), task_kind="binary"), q, c


def gen_regime_a(cfg: RegimeAConfig = RegimeAConfig()) -> SyntheticData:
    """Three-view Gaussian mixture over (C, Q) with confounder strength ``g``."""
    if not 0.0 <= cfg.g <= 1.0:
        raise InputError(f"g must lie in [0, 1], got {cfg.g}")
    probs = _check_probs(cfg.probs)
    tables = _interpolate(cfg.resolved_tables(), cfg.g)
    n_views, _, per_view = tables.shape
    means_cq = np.concatenate(list(tables), axis=1)
    names = [f"v{v + 1}j{j + 1}" for v in range(n_views) for j in range(per_view)]
    m, q, c = _sample_mixture("regime_a", cfg.seed, cfg.n, probs, means_cq, cfg.noise_var, names)
    groups = [np.arange(v * per_view, (v + 1) * per_view) for v in range(n_views)]
    part = from_groups(groups) if n_views == 3 else None
    return SyntheticData(m, q, c, _cq_to_qc(means_cq), probs[[0, 2, 1, 3]], part,
                         {"tables": tables, "g": cfg.g})


@dataclass(frozen=True)
class RegimeBConfig:
    n: int = 3000
    c: float = 1.0
    d: int = 12
    q_only: int = 3
    c_only: int = 8
    q_effect: float = 0.5
    c_effect: float = 2.0
    interaction: float = 0.5
    base_scale: float = 0.5
    noise_var: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.q_only + self.c_only + 1 != self.d:
            raise InputError("q_only + c_only + 1 must equal d")


def _regime_b_tables(cfg: RegimeBConfig) -> np.ndarray:
    """Per-view (4, d) mean tables in (c, q) order, fixed across seeds.

    Q-only features move by ``+-q_effect``, C-only features by ``c_effect``
    when ``C = 1`` (all in the same direction, so they dominate the judge
    average), and the last feature carries both effects plus a Q x C
    interaction. Per-feature intercepts keep each view's four state means
    linearly independent.
    """
    rng = stream("regime_b_tables", 0, "tables")
    tables = np.empty((3, 4, cfg.d))
    for v in range(3):
        base = rng.uniform(-cfg.base_scale, cfg.base_scale, cfg.d)
        a = cfg.q_effect * rng.uniform(0.7, 1.3, cfg.q_only)
        b = cfg.c_effect * rng.uniform(0.7, 1.3, cfg.c_only)
        for k, (c, q) in enumerate(CQ_STATES):
            row = base.copy()
            row[:cfg.q_only] += a * (2 * q - 1)
            row[cfg.q_only:cfg.q_only + cfg.c_only] += b * c
            row[-1] += (cfg.q_effect * (2 * q - 1) + 0.25 * cfg.c_effect * c
                        + cfg.interaction * (2 * q - 1) * (2 * c - 1))
            tables[v, k] = row
    return tables


def gen_regime_b(cfg: RegimeBConfig = RegimeBConfig()) -> SyntheticData:
    """Three views of Q-only, C-only and mixed features with ``C`` independent of ``Q``.

    The returned partition is the planted view assignment.
    """
    if not 0.0 <= cfg.c <= 1.0:
        raise InputError(f"c must lie in [0, 1], got {cfg.c}")
    tables = _interpolate(_regime_b_tables(cfg), cfg.c)
    means_cq = np.concatenate(list(tables), axis=1)
    names = [f"v{v + 1}f{j + 1}" for v in range(3) for j in range(cfg.d)]
    probs = np.full(4, 0.25)
    m, q, c = _sample_mixture("regime_b", cfg.seed, cfg.n, probs, means_cq, cfg.noise_var, names)
    part = from_groups([np.arange(v * cfg.d, (v + 1) * cfg.d) for v in range(3)])
    return SyntheticData(m, q, c, _cq_to_qc(means_cq), probs, part,
                         {"tables": tables, "c": cfg.c})


@dataclass(frozen=True)
class PlantedGraphConfig:
    n: int = 10000
    p: int = 12
    views: int = 3
    strength: float = 0.3
    density: float = 0.4
    mean_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.density <= 1.0:
            raise InputError(f"edge density must lie in (0, 1], got {self.density}")
        if self.p % self.views:
            raise InputError("p must split evenly into views")


def planted_precision(cfg: PlantedGraphConfig, rng: np.random.Generator) -> np.ndarray:
    """Block-diagonal precision with random within-view edges and no cross-view edges."""
    size = cfg.p // cfg.views
    theta = np.eye(cfg.p)
    for v in range(cfg.views):
        idx = np.arange(v * size, (v + 1) * size)
        iu = np.triu_indices(size, 1)
        edges = rng.random(iu[0].size) < cfg.density
        block = np.eye(size)
        block[iu[0][edges], iu[1][edges]] = cfg.strength
        block = np.triu(block, 1) + np.triu(block, 1).T + np.eye(size)
        boost = 0.0
        while np.linalg.eigvalsh(block + boost * np.eye(size))[0] <= 1e-3:
            boost += 0.1
            log.info("planted precision block %d not PD; diagonal boost %.1f", v, boost)
        theta[np.ix_(idx, idx)] = block + boost * np.eye(size)
    return theta


def gen_planted_graph(cfg: PlantedGraphConfig = PlantedGraphConfig()) -> SyntheticData:
    """Four-state mixture whose within-state noise has a planted view-block graph."""
    theta = planted_precision(cfg, stream("planted_graph", cfg.seed, "graph"))
    sigma = np.linalg.inv(theta)
    means_qc = cfg.mean_scale * stream("planted_graph", cfg.seed, "means").standard_normal((4, cfg.p))
    probs_qc = np.array([0.2, 0.3, 0.3, 0.2])
    states = stream("planted_graph", cfg.seed, "states").choice(4, size=cfg.n, p=probs_qc)
    chol = np.linalg.cholesky(sigma)
    noise = stream("planted_graph", cfg.seed, "noise").standard_normal((cfg.n, cfg.p)) @ chol.T
    x = means_qc[states] + noise
    q, c = states // 2, states % 2
    size = cfg.p // cfg.views
    part = from_groups([np.arange(v * size, (v + 1) * size) for v in range(cfg.views)])
    m = from_array(x, [f"j{j + 1}" for j in range(cfg.p)], truth=q.astype(float), task_kind="binary")
    return SyntheticData(m, q, c, means_qc, probs_qc, part, {"theta": theta, "sigma": sigma})


@dataclass(frozen=True)
class GaussianModelConfig:
    p: int = 10
    h: int = 2
    d: tuple[float, ...] = (1.0, 2.0)        # diagonal of K_HH
    perturbation: float = 0.0                # spectral norm of E added to K_JH
    loading_scale: float = 1.0
    s_diag: float = 3.0                      # diagonal of K_JJ
    s_offdiag: float = 0.0                   # strength of sparse within-judge edges
    n: int = 0
    seed: int = 0

    def __post_init__(self):
        if len(self.d) != self.h or min(self.d) <= 0 or len(set(self.d)) != self.h:
            raise InputError("K_HH needs h distinct positive diagonal entries")


@dataclass(frozen=True)
class GaussianModel:
    sigma: np.ndarray        # marginal covariance of J
    l: np.ndarray            # K_JH K_HH^-1 K_HJ
    s: np.ndarray            # K_JJ
    k_jh: np.ndarray
    k_jh_base: np.ndarray    # orthonormal-column loadings before perturbation
    k_hh: np.ndarray
    eigengap: float
    samples: np.ndarray | None = None


def gen_gaussian_model(cfg: GaussianModelConfig = GaussianModelConfig()) -> GaussianModel:
    """Joint Gaussian over judges and latents built from precision blocks.

    ``K_JH`` starts from orthonormal columns scaled by ``loading_scale`` and
    is optionally perturbed by a random ``E`` with ``||E||_2 = perturbation``.
    """
    rng = stream("gaussian_model", cfg.seed, "structure")
    base = np.linalg.qr(rng.standard_normal((cfg.p, cfg.h)))[0] * cfg.loading_scale
    k_jh = base.copy()
    if cfg.perturbation > 0:
        e = rng.standard_normal((cfg.p, cfg.h))
        k_jh = k_jh + cfg.perturbation * e / np.linalg.norm(e, 2)
    k_hh = np.diag(np.asarray(cfg.d, dtype=float))
    s = cfg.s_diag * np.eye(cfg.p)
    if cfg.s_offdiag:
        iu = np.triu_indices(cfg.p, 1)
        mask = rng.random(iu[0].size) < 0.2
        s[iu[0][mask], iu[1][mask]] = cfg.s_offdiag
        s[iu[1][mask], iu[0][mask]] = cfg.s_offdiag
    joint = np.block([[s, k_jh], [k_jh.T, k_hh]])
    if np.linalg.eigvalsh(joint)[0] <= 0:
        raise InputError("joint precision is not positive definite; lower the loadings")
    l = k_jh @ np.linalg.inv(k_hh) @ k_jh.T
    sigma = np.linalg.inv(s - l)
    vals = np.sort(np.linalg.eigvalsh(l))[::-1][:cfg.h]
    gaps = np.abs(np.diff(np.concatenate([vals, [0.0]])))
    samples = None
    if cfg.n > 0:
        samples = stream("gaussian_model", cfg.seed, "samples").multivariate_normal(
            np.zeros(cfg.p), sigma, size=cfg.n, method="cholesky")
    return GaussianModel(0.5 * (sigma + sigma.T), l, s, k_jh, base, k_hh,
                         float(gaps.min()), samples)


@dataclass(frozen=True)
class PlantedSplr:
    theta: np.ndarray
    s: np.ndarray
    l: np.ndarray
    u: np.ndarray


def gen_planted_splr(seed: int = 0, p: int = 12, blocks: int = 3, strength: float = 0.3,
                     low_rank: float = 0.8) -> PlantedSplr:
    """Population precision ``S - low_rank * u u^T`` with block-diagonal ``S``.

    ``u`` has random signs and magnitudes in [0.8, 1.2] before normalizing,
    which keeps it incoherent with the sparse blocks.
    """
    if p % blocks:
        raise InputError("p must split evenly into blocks")
    size = p // blocks
    s = np.eye(p)
    for b in range(blocks):
        idx = np.arange(b * size, (b + 1) * size)
        s[np.ix_(idx, idx)] = strength
    np.fill_diagonal(s, 1.0)
    rng = stream("planted_splr", seed, "loading")
    u = rng.choice([-1.0, 1.0], size=p) * rng.uniform(0.8, 1.2, size=p)
    u /= np.linalg.norm(u)
    l = low_rank * np.outer(u, u)
    return PlantedSplr(s - l, s, l, u)
