"""Three-view judge partitions derived from a sparse dependency matrix."""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.sparse.csgraph import connected_components

from .errors import CareError, InputError

DEFAULT_EPS = 1e-3
DEFAULT_RESTARTS = 32


@dataclass(frozen=True)
class TriViewPartition:
    groups: tuple[np.ndarray, np.ndarray, np.ndarray]
    eps: float
    cross_mass: float
    feasible: bool
    method: str = "given"

    @property
    def p(self) -> int:
        return int(sum(g.size for g in self.groups))

    @property
    def sizes(self) -> tuple[int, int, int]:
        return tuple(int(g.size) for g in self.groups)

    def labels(self) -> np.ndarray:
        lab = np.empty(self.p, dtype=int)
        for k, g in enumerate(self.groups):
            lab[g] = k
        return lab

    def order(self) -> np.ndarray:
        """Judge indices in view order (view 1 first)."""
        return np.concatenate(self.groups)


def edge_weights(s) -> np.ndarray:
    a = np.abs(np.asarray(s, dtype=float))
    a = 0.5 * (a + a.T)
    np.fill_diagonal(a, 0.0)
    return a


def cross_mass(labels, s) -> float:
    a = edge_weights(s)
    labels = np.asarray(labels)
    cut = labels[:, None] != labels[None, :]
    return float(a[cut].sum() / 2)


def max_cross(labels, s) -> float:
    a = edge_weights(s)
    labels = np.asarray(labels)
    cut = labels[:, None] != labels[None, :]
    return float(a[cut].max()) if cut.any() else 0.0


def canonical_labels(labels) -> np.ndarray:
    """Relabel groups in order of first appearance."""
    labels = np.asarray(labels)
    mapping: dict[int, int] = {}
    out = np.empty_like(labels)
    for i, g in enumerate(labels):
        out[i] = mapping.setdefault(int(g), len(mapping))
    return out


def min_group_size(p: int) -> int:
    return max(1, p // 6)


def from_labels(labels, s=None, eps: float = DEFAULT_EPS, method: str = "given") -> TriViewPartition:
    labels = canonical_labels(labels)
    groups = tuple(np.flatnonzero(labels == k) for k in range(3))
    if any(g.size == 0 for g in groups) or labels.max() != 2:
        raise InputError("a tri-view partition needs exactly three nonempty groups")
    if s is None:
        return TriViewPartition(groups, eps, 0.0, True, method)
    return TriViewPartition(groups, eps, cross_mass(labels, s),
                            max_cross(labels, s) <= eps, method)


def from_groups(groups, s=None, eps: float = DEFAULT_EPS) -> TriViewPartition:
    """Build a partition from explicit index groups, keeping their order."""
    groups = tuple(np.sort(np.asarray(g, dtype=int)) for g in groups)
    if len(groups) != 3 or any(g.size == 0 for g in groups):
        raise InputError("a tri-view partition needs exactly three nonempty groups")
    allidx = np.concatenate(groups)
    if np.unique(allidx).size != allidx.size or set(allidx) != set(range(allidx.size)):
        raise InputError("groups must be disjoint and cover 0..p-1")
    if s is None:
        return TriViewPartition(groups, eps, 0.0, True, "given")
    lab = np.empty(allidx.size, dtype=int)
    for k, g in enumerate(groups):
        lab[g] = k
    return TriViewPartition(groups, eps, cross_mass(lab, s), max_cross(lab, s) <= eps, "given")


def _merge_components(comp: np.ndarray, n_comp: int) -> np.ndarray:
    members = [np.flatnonzero(comp == c) for c in range(n_comp)]
    members.sort(key=lambda m: (-m.size, m[0]))
    sizes = [0, 0, 0]
    labels = np.empty(comp.size, dtype=int)
    for m in members:
        g = min(range(3), key=lambda k: (sizes[k], k))
        labels[m] = g
        sizes[g] += m.size
    return labels


def _start_labels(p: int, rng: np.random.Generator, min_size: int, balanced: bool) -> np.ndarray:
    if balanced:
        labels = np.arange(p) % 3
    else:
        # group sizes uniform over compositions of p with every part >= min_size;
        # optima with one large group are hard to reach from a balanced start
        free = p - 3 * min_size
        cuts = np.sort(rng.integers(0, free + 1, size=2))
        sizes = np.diff(np.r_[0, cuts, free]) + min_size
        labels = np.repeat(np.arange(3), sizes)
    rng.shuffle(labels)
    return labels


def _local_search(a: np.ndarray, rng: np.random.Generator, min_size: int,
                  balanced: bool = True) -> np.ndarray:
    p = a.shape[0]
    labels = _start_labels(p, rng, min_size, balanced)
    onehot = np.eye(3)[labels]
    conn = a @ onehot
    sizes = onehot.sum(axis=0).astype(int)
    while True:
        own = conn[np.arange(p), labels]
        # single-judge moves: gain = conn to target group - conn to own group
        move_gain = conn - own[:, None]
        move_gain[np.arange(p), labels] = -np.inf
        move_gain[sizes[labels] <= min_size, :] = -np.inf
        i, g = np.unravel_index(np.argmax(move_gain), move_gain.shape)
        best_gain, best = move_gain[i, g], ("move", i, g)
        # pairwise swaps between groups keep sizes fixed
        other_i = conn[:, labels]  # conn[i, group of j]
        swap_gain = (other_i - own[:, None]) + (other_i.T - own[None, :]) - 2 * a
        swap_gain[labels[:, None] == labels[None, :]] = -np.inf
        j1, j2 = np.unravel_index(np.argmax(swap_gain), swap_gain.shape)
        if swap_gain[j1, j2] > best_gain:
            best_gain, best = swap_gain[j1, j2], ("swap", j1, j2)
        if best_gain <= 1e-14 * max(1.0, a.sum()):
            return labels
        if best[0] == "move":
            _, i, g = best
            old = labels[i]
            conn[:, old] -= a[:, i]
            conn[:, g] += a[:, i]
            sizes[old] -= 1
            sizes[g] += 1
            labels[i] = g
        else:
            _, i, j = best
            gi, gj = labels[i], labels[j]
            conn[:, gi] += a[:, j] - a[:, i]
            conn[:, gj] += a[:, i] - a[:, j]
            labels[i], labels[j] = gj, gi


def partition(s, eps: float = DEFAULT_EPS, seed: int = 0,
              restarts: int = DEFAULT_RESTARTS, min_size: int | None = None) -> TriViewPartition:
    """Split judges into three groups with as little cross-group mass in ``s`` as possible.

    If the graph of entries with ``|s_ij| > eps`` has at least three
    connected components, whole components are merged into three groups
    (largest component into the currently smallest group) and the result is
    exactly feasible. Otherwise, or when that merge leaves a group below
    ``min_size`` judges (default ``max(1, p // 6)``), a multi-restart local
    search over single-judge moves and pairwise swaps minimizes the cross
    mass subject to the size floor. Even-numbered restarts start from
    balanced groups, odd-numbered ones from random group sizes.
    ``min_size = p // 3`` forces equal views.
    """
    a = edge_weights(s)
    p = a.shape[0]
    if p < 3:
        raise InputError(f"need at least 3 judges to form three views, got {p}")
    min_size = min_group_size(p) if min_size is None else int(min_size)
    if not 1 <= min_size <= p // 3:
        raise InputError(f"min_size must lie in [1, {p // 3}] for p={p}, got {min_size}")
    n_comp, comp = connected_components(a > eps, directed=False)
    if n_comp >= 3:
        labels = canonical_labels(_merge_components(comp, n_comp))
        if np.bincount(labels, minlength=3).min() >= min_size:
            return from_labels(labels, s, eps, "components")

    rng = np.random.default_rng(seed)
    best_key, best = None, None
    for r in range(max(1, restarts)):
        labels = canonical_labels(_local_search(a, rng, min_size, balanced=r % 2 == 0))
        key = (cross_mass(labels, a), tuple(labels))
        if best_key is None or key[0] < best_key[0] - 1e-12 * max(1.0, key[0]) or (
                abs(key[0] - best_key[0]) <= 1e-12 * max(1.0, key[0]) and key[1] < best_key[1]):
            best_key, best = key, labels
    return from_labels(best, s, eps, "local_search")


def exhaustive_partition(s, min_size: int | None = None) -> tuple[np.ndarray, float]:
    """Minimum cross mass over every 3-partition by enumeration (small ``p`` only).

    Groups below ``min_size`` judges (default ``max(1, p // 6)``) are excluded,
    matching the constraint of :func:`partition`.
    """
    a = edge_weights(s)
    p = a.shape[0]
    if p > 12:
        raise InputError("exhaustive partition search is limited to p <= 12")
    min_size = min_group_size(p) if min_size is None else min_size
    # judge 0 always sits in group 0; the remaining labels run over 3^(p-1) codes
    codes = np.arange(3 ** (p - 1))
    labels = np.zeros((codes.size, p), dtype=int)
    for j in range(1, p):
        labels[:, j] = (codes // 3 ** (p - 1 - j)) % 3
    counts = np.stack([(labels == k).sum(axis=1) for k in range(3)], axis=1)
    labels = labels[counts.min(axis=1) >= min_size]
    if labels.shape[0] == 0:
        raise InputError(f"no 3-partition of {p} judges has groups of size >= {min_size}")
    onehot = np.eye(3)[labels]                                  # (m, p, 3)
    within = np.einsum("mik,ij,mjk->m", onehot, a, onehot) / 2
    mass = a.sum() / 2 - within
    k = int(np.argmin(mass))
    return canonical_labels(labels[k]), float(mass[k])


def random_partition(p: int, seed: int = 0, sizes=None) -> TriViewPartition:
    """Uniformly random assignment of judges into views of the given sizes."""
    if sizes is None:
        sizes = (p // 3 + (p % 3 > 0), p // 3 + (p % 3 > 1), p // 3)
    if sum(sizes) != p or min(sizes) < 1:
        raise InputError(f"sizes {sizes} do not split {p} judges into three views")
    perm = np.random.default_rng(seed).permutation(p)
    cuts = np.cumsum(sizes)[:-1]
    return from_groups(np.split(perm, cuts))


def verify(part: TriViewPartition, s) -> dict:
    """Recompute feasibility and cross mass; disagreement means the partition is corrupt."""
    a = edge_weights(s)
    if a.shape[0] != part.p:
        raise InputError(f"partition covers {part.p} judges, matrix has {a.shape[0]}")
    labels = part.labels()
    mass = cross_mass(labels, a)
    worst = max_cross(labels, a)
    feasible = worst <= part.eps
    if feasible != part.feasible or abs(mass - part.cross_mass) > 1e-9 * max(1.0, mass):
        raise CareError(f"stored partition disagrees with recomputation: "
                        f"cross_mass {part.cross_mass} vs {mass}, "
                        f"feasible {part.feasible} vs {feasible}")
    return {"feasible": feasible, "cross_mass": mass, "max_cross": worst,
            "sizes": part.sizes, "eps": part.eps}
