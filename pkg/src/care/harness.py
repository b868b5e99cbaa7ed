"""Metrics, validation-split hyperparameter search, benchmark sweeps and theory checks.

Everything here runs sequentially; given a configuration and seeds the
reports are deterministic.
"""
from __future__ import annotations

import itertools
import logging
import time
import warnings
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import baselines, moments, partition as part_mod, pipeline, splr, synth
from .dataio import ScoreMatrix, Split, _jsonable, from_array, split as make_split
from .errors import CareError, InputError, NumericalError

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
METHODS = ("avg", "mv", "ds", "care-svd", "care-tensor")
CHECK_NAMES = ("exact_recovery", "stability", "misspecification", "spectral_rate", "tensor_rate")
RATE_NS = (1000, 4000, 16000, 64000)


# ---------------------------------------------------------------- metrics

def _pair(pred, truth) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=float).ravel()
    truth = np.asarray(truth, dtype=float).ravel()
    if pred.shape != truth.shape:
        raise InputError(f"prediction has {pred.size} entries, truth has {truth.size}")
    if pred.size == 0:
        raise InputError("empty prediction")
    return pred, truth


def mae(pred, truth) -> float:
    pred, truth = _pair(pred, truth)
    return float(np.mean(np.abs(pred - truth)))


def accuracy(pred, truth) -> float:
    pred, truth = _pair(pred, truth)
    return float(np.mean(pred == truth))


def fpr(pred, truth) -> float:
    """False positive rate ``FP / (FP + TN)`` for 0/1 labels."""
    pred, truth = _pair(pred, truth)
    neg = truth == 0
    if not neg.any():
        raise InputError("false positive rate is undefined without negatives")
    return float(np.mean(pred[neg] == 1))


# ---------------------------------------------------------------- reports

def summarize(per_seed: Sequence[dict], keys: Iterable[str] | None = None) -> dict:
    """Mean (and std over two or more seeds) of each numeric metric."""
    if keys is None:
        keys = sorted({k for row in per_seed for k, v in row.items()
                       if k != "seed" and isinstance(v, (int, float, np.number))
                       and not isinstance(v, bool)})
    out = {}
    for k in keys:
        vals = np.array([row[k] for row in per_seed if row.get(k) is not None], dtype=float)
        if vals.size == 0:
            continue
        entry = {"mean": float(vals.mean()), "n": int(vals.size)}
        if vals.size >= 2:
            entry["std"] = float(vals.std(ddof=1))
        out[k] = entry
    return out


@dataclass
class RunReport:
    method: str
    params: dict
    per_seed: list = field(default_factory=list)
    aggregate: dict = field(default_factory=dict)
    wall_time: float = 0.0
    config: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["schema_version"] = SCHEMA_VERSION
        return _jsonable(d)


# ---------------------------------------------------------------- methods

def _binary(m: ScoreMatrix) -> bool:
    return m.task_kind == "binary"


@dataclass
class MethodOutput:
    scores: np.ndarray            # continuous scores (or labels for vote methods)
    labels: np.ndarray | None     # 0/1 decisions when the task is binary
    info: dict = field(default_factory=dict)


def fit_method(method: str, train: ScoreMatrix, params: dict | None = None, seed: int = 0):
    """Fit ``method`` on ``train`` and return a predictor ``ScoreMatrix -> MethodOutput``.

    Binary decisions: AVG and CARE-SVD threshold at the mean training score
    unless ``params['threshold']`` is given; MV and DS let each judge vote
    above its own training mean (or the given threshold); CARE-Tensor
    thresholds ``Pr(Q=1 | J)`` at 0.5.
    """
    params = dict(params or {})
    threshold = params.pop("threshold", None)
    binary = _binary(train)
    if method not in METHODS:
        raise InputError(f"unknown method {method!r}; choose from {METHODS}")

    if method == "avg":
        ref = train.values.mean(axis=1).mean() if threshold is None else threshold

        def predict(m):
            s = baselines.avg(m).scores
            return MethodOutput(s, (s > ref).astype(float) if binary else None)
        return predict, {}

    if method in ("mv", "ds"):
        thr = train.values.mean(axis=0) if threshold is None else threshold

        def predict(m):
            if method == "mv":
                out = baselines.mv(m, threshold=thr if binary else None, binary=binary)
            else:
                out = baselines.dawid_skene(m, threshold=thr)
            labels = out.scores if (binary or method == "ds") else None
            info = {k: v for k, v in out.info.items() if k != "fit"}
            return MethodOutput(out.scores, labels, info)
        return predict, {"threshold": thr if threshold is None else threshold}

    if method == "care-svd":
        kw = {k: params[k] for k in ("gamma_n", "tau", "rule", "weights", "calibrate", "anchors")
              if k in params}
        fit = pipeline.fit_svd(train, **kw)
        ref = fit.scores(train).mean() if threshold is None else threshold

        def predict(m):
            s = fit.scores(m)
            return MethodOutput(s, (s > ref).astype(float) if binary else None,
                                {"weights": fit.weights})
        return predict, {**fit.params, "rank_l": int(fit.factors.h),
                         "quality_index": fit.factors.quality_index}

    kw = {k: params[k] for k in ("gamma_n", "tau", "eps", "partition_restarts", "rank",
                                 "cp_restarts", "em_refine", "partition", "min_view_size",
                                 "anchor_means") if k in params}
    fit = pipeline.fit_tensor(train, seed=seed, **kw)
    avg_train = train.values.mean(axis=1)
    prob_train = fit.quality_prob(train)
    # scoring tasks: map Pr(Q=1 | J) affinely onto the average-score scale
    sd = prob_train.std()
    a = avg_train.std() / sd if sd > 0 else 0.0
    b = avg_train.mean() - a * prob_train.mean()

    def predict(m):
        prob = fit.quality_prob(m)
        labels = (prob > 0.5).astype(float) if binary else None
        return MethodOutput(prob if binary else a * prob + b, labels, {"quality_prob": prob})
    info = dict(fit.params)
    info.update({"partition": [g.tolist() for g in fit.partition.groups],
                 "cross_mass": fit.partition.cross_mass, "feasible": fit.partition.feasible,
                 "cp_fit": fit.cp.fit, "state_rule": fit.state_rule,
                 "mixture_weights": fit.weights.tolist()})
    info.pop("anchor_means", None)
    return predict, info


def evaluate(out: MethodOutput, truth, binary: bool) -> dict:
    if binary:
        return {"accuracy": accuracy(out.labels, truth)}
    return {"mae": mae(out.scores, truth)}


# ---------------------------------------------------------------- grid search

def svd_grid(tau: float = pipeline.SVD_DEFAULTS["tau"]) -> list[dict]:
    return [pipeline.svd_grid_params(g, tau) for g in splr.SVD_GAMMA_GRID]


def tensor_grid() -> list[dict]:
    return [pipeline.tensor_grid_params(pt) for pt in splr.TENSOR_GRID]


def default_grid(method: str) -> list[dict]:
    if method == "care-svd":
        return svd_grid()
    if method == "care-tensor":
        return tensor_grid()
    return [{}]


def _order_key(params: dict) -> tuple:
    return (params.get("gamma_n", 0.0), params.get("tau", 0.0))


def select(grid: Sequence[dict], score: Callable[[dict], float], maximize: bool = True):
    """Best grid point under ``score``; ties go to the smallest ``gamma_n``, then ``tau``.

    Points whose evaluation raises a package error are skipped and reported.
    Returns ``(best_params, best_score, diagnostics)``.
    """
    if not grid:
        raise InputError("empty hyperparameter grid")
    best, best_val, diag = None, None, []
    for params in sorted(grid, key=_order_key):
        try:
            val = float(score(params))
        except (CareError, np.linalg.LinAlgError) as exc:
            diag.append({"params": params, "error": f"{type(exc).__name__}: {exc}"})
            continue
        diag.append({"params": params, "score": val})
        if not np.isfinite(val):
            continue
        if best is None or (val > best_val if maximize else val < best_val):
            best, best_val = params, val
    if best is None:
        lines = "; ".join(f"{d['params']}: {d.get('error', d.get('score'))}" for d in diag)
        raise NumericalError(f"every grid point failed: {lines}")
    return best, best_val, diag


@dataclass
class GridResult:
    best: dict
    report: RunReport
    artifacts: dict      # per-point training artifacts, keyed by the point's index


def grid_search(m: ScoreMatrix, method: str, grid: Sequence[dict] | None = None,
                split: Split | None = None, seed: int = 0,
                base_params: dict | None = None) -> GridResult:
    """Fit on the training rows at every grid point and pick the best on validation.

    Accuracy is maximized for binary tasks and MAE minimized otherwise.
    Training never sees validation rows.
    """
    if m.truth is None:
        raise InputError("grid search needs a truth column")
    t0 = time.perf_counter()
    grid = list(default_grid(method) if grid is None else grid)
    split = make_split(m, 0.15, seed) if split is None else split
    train, val = m.subset(split.train_idx), m.subset(split.val_idx)
    binary = _binary(m)
    metric = "accuracy" if binary else "mae"
    artifacts: dict[int, dict] = {}
    index = {id(p): i for i, p in enumerate(grid)}

    def score(params):
        merged = {**(base_params or {}), **params}
        predict, info = fit_method(method, train, merged, seed=seed)
        artifacts[index[id(params)]] = info
        return evaluate(predict(val), val.truth, binary)[metric]

    best, best_val, diag = select(grid, score, maximize=binary)
    report = RunReport(method, dict(best), per_seed=[{"seed": seed, metric: best_val}],
                       aggregate={metric: {"mean": best_val, "n": 1}},
                       wall_time=time.perf_counter() - t0,
                       config={"grid": grid, "n_train": int(split.train_idx.size),
                               "n_val": int(split.val_idx.size), "metric": metric},
                       extra={"points": diag})
    return GridResult(dict(best), report, artifacts)


def splr_support_recovery(seed: int, grid: Sequence[dict] | None = None,
                          rank_threshold: float = 1e-3) -> dict:
    """Planted block-diagonal ``S`` minus rank-one ``L``: does some grid point recover both?

    The selection score is the oracle match (support of ``S`` and rank of
    ``L``); ties resolve as in :func:`select`.
    """
    planted = synth.gen_planted_splr(seed)
    grid = tensor_grid() if grid is None else grid
    support = planted.s != 0

    def score(params):
        d = splr.decompose(planted.theta, params["gamma_n"], params["tau"])
        ok_support = np.array_equal(np.abs(d.s) > 0, support)
        return float(ok_support and d.rank(rank_threshold) == 1)

    best, val, diag = select(grid, score, maximize=True)
    return {"seed": seed, "recovered": bool(val == 1.0), "selected": best,
            "n_recovering": int(sum(d.get("score", 0.0) for d in diag))}


# ---------------------------------------------------------------- benchmarks

def _match_error(est: np.ndarray, true: np.ndarray) -> float:
    """Mean over states of ||mu - mu_hat||_2 after the best state permutation."""
    k = true.shape[0]
    cost = np.linalg.norm(est[:, None, :] - true[None, :, :], axis=2)
    best = min(itertools.permutations(range(k)),
               key=lambda perm: cost[list(perm), range(k)].sum())
    return float(cost[list(best), range(k)].mean())


def bench_d9(seeds: Iterable[int] = range(10), n: int = 10000,
             gamma_n: float = pipeline.TENSOR_DEFAULTS["gamma_n"],
             tau: float = pipeline.TENSOR_DEFAULTS["tau"]) -> RunReport:
    """Mean-recovery error with the graph-aware partition versus a random one.

    Both partitions use three views of four judges; states are matched to
    the planted means by the best permutation before measuring error.
    """
    t0 = time.perf_counter()
    rows = []
    for s in seeds:
        d = synth.gen_planted_graph(synth.PlantedGraphConfig(n=n, seed=s))
        size = d.scores.p // 3
        graph = pipeline.fit_tensor(d.scores, gamma_n, tau, seed=s, min_view_size=size,
                                    anchor_means=d.means)
        rand = pipeline.fit_tensor(d.scores, partition=part_mod.random_partition(d.scores.p, seed=s),
                                   anchor_means=d.means, seed=s)
        rows.append({"seed": s, "error_graph": _match_error(graph.means, d.means),
                     "error_random": _match_error(rand.means, d.means),
                     "graph_cross_mass": graph.partition.cross_mass,
                     "true_cross_mass": part_mod.cross_mass(graph.partition.labels(),
                                                            d.extra["theta"])})
    med_g = float(np.median([r["error_graph"] for r in rows]))
    med_r = float(np.median([r["error_random"] for r in rows]))
    ratio = med_r / med_g if med_g > 0 else float("inf")
    return RunReport("d9", {"gamma_n": gamma_n, "tau": tau, "n": n}, rows, summarize(rows),
                     time.perf_counter() - t0, {"seeds": [r["seed"] for r in rows]},
                     {"median_error_graph": med_g, "median_error_random": med_r,
                      "ratio": ratio, "pass_floor": ratio >= 5.0, "target_met": ratio >= 10.0})


def _regime_accuracies(m: ScoreMatrix, q: np.ndarray, seed: int, tensor_kw: dict,
                       eval_rows=None) -> dict:
    rows = np.arange(m.n) if eval_rows is None else eval_rows
    sub = m.subset(rows) if eval_rows is not None else m
    qq = q[rows]
    out = {}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        for method in ("avg", "mv", "ds", "care-svd", "care-tensor"):
            kw = tensor_kw if method == "care-tensor" else {}
            predict, _ = fit_method(method, sub, kw, seed=seed)
            out[method] = accuracy(predict(sub).labels, qq)
    return out


def _sweep_summary(rows: list[dict], key: str) -> dict:
    summary = {}
    for level in sorted({r[key] for r in rows}):
        sel = [r for r in rows if r[key] == level]
        summary[f"{level:g}"] = {meth: summarize(sel, [meth])[meth] for meth in
                                 ("avg", "mv", "ds", "care-svd", "care-tensor")}
    return summary


def bench_regime_a(seeds: Iterable[int] = range(10), gs: Sequence[float] | None = None,
                   n: int = 50000) -> RunReport:
    """Accuracy sweep over confounder strength g in the second-order-sufficient regime."""
    gs = np.round(np.linspace(0.0, 1.0, 21), 4) if gs is None else gs
    t0 = time.perf_counter()
    rows = []
    for g in gs:
        for s in seeds:
            d = synth.gen_regime_a(synth.RegimeAConfig(n=n, g=float(g), seed=s))
            acc = _regime_accuracies(d.scores, d.q, s, {})
            rows.append({"seed": s, "g": float(g), **acc})
    return RunReport("regime-a", {"n": n, "svd": pipeline.SVD_DEFAULTS,
                                  "tensor": pipeline.TENSOR_DEFAULTS},
                     rows, _sweep_summary(rows, "g"), time.perf_counter() - t0,
                     {"gs": [float(g) for g in gs], "seeds": sorted({r["seed"] for r in rows})})


def bench_regime_b(seeds: Iterable[int] = range(25), cs: Sequence[float] | None = None,
                   n: int = 3000, val_frac: float = 0.15) -> RunReport:
    """Accuracy sweep over confounder strength c in the second-order-insufficient regime.

    The tensor path uses the planted views and matches its components to
    state prototypes averaged over a labeled validation split; every method
    is scored on the remaining rows.
    """
    cs = np.round(np.linspace(0.0, 1.0, 11), 4) if cs is None else cs
    t0 = time.perf_counter()
    rows = []
    for c in cs:
        for s in seeds:
            d = synth.gen_regime_b(synth.RegimeBConfig(n=n, c=float(c), seed=s))
            sp = make_split(d.scores, val_frac, seed=s)
            x_val = d.scores.values[sp.val_idx]
            state = 2 * d.q[sp.val_idx] + d.c[sp.val_idx]
            if np.unique(state).size < 4:
                raise NumericalError("validation split is missing a latent state")
            anchors = np.array([x_val[state == k].mean(axis=0) for k in range(4)])
            acc = _regime_accuracies(d.scores, d.q, s,
                                     {"partition": d.partition, "anchor_means": anchors},
                                     eval_rows=sp.train_idx)
            rows.append({"seed": s, "c": float(c), **acc})
    return RunReport("regime-b", {"n": n, "val_frac": val_frac, "svd": pipeline.SVD_DEFAULTS},
                     rows, _sweep_summary(rows, "c"), time.perf_counter() - t0,
                     {"cs": [float(c) for c in cs], "seeds": sorted({r["seed"] for r in rows})})


EXPERIMENTS = {"d9": bench_d9, "regime-a": bench_regime_a, "regime-b": bench_regime_b}


# ---------------------------------------------------------------- theory checks

def _distinct_eigenvalues(rng, h: int, lo: float = 0.2, hi: float = 2.0, gap: float = 0.1):
    while True:
        lam = np.sort(rng.uniform(lo, hi, h))[::-1]
        if h == 1 or np.min(-np.diff(lam)) >= gap:
            return lam


def _signed_error(est: np.ndarray, ref: np.ndarray) -> float:
    return float(min(np.linalg.norm(est - ref), np.linalg.norm(est + ref)))


def _top_eigvecs(m: np.ndarray, h: int) -> tuple[np.ndarray, np.ndarray]:
    vals, vecs = np.linalg.eigh(m)
    return vals[::-1][:h], vecs[:, ::-1][:, :h]


def check_exact_recovery(n_models: int = 50, seed: int = 0, tol: float = 1e-8) -> dict:
    """Eigenvectors of population L match orthonormal K_JH columns up to sign and order."""
    rng = synth.stream("theory_exact", seed, "models")
    worst = 0.0
    for k in range(n_models):
        h = int(rng.integers(1, 5))
        p = int(rng.integers(h + 2, 16))
        lam = _distinct_eigenvalues(rng, h)
        gm = synth.gen_gaussian_model(synth.GaussianModelConfig(
            p=p, h=h, d=tuple(1.0 / lam), s_diag=2.0 * lam.max() + 1.0, seed=seed * 1000 + k))
        _, u = _top_eigvecs(gm.l, h)
        cost = np.array([[_signed_error(u[:, i], gm.k_jh[:, j]) for j in range(h)] for i in range(h)])
        r, c = linear_sum_assignment(cost)
        worst = max(worst, float(cost[r, c].max()))
    return {"check": "exact_recovery", "seed": seed, "models": n_models,
            "max_error": worst, "tolerance": tol, "passed": worst < tol}


def check_stability(n_models: int = 100, seed: int = 0,
                    norms: Sequence[float] = (0.01, 0.02, 0.05), slack: float = 0.01) -> dict:
    """Perturbed loadings: ||u~_i - s_i u_i|| <= 4 ||K_HH^-1|| ||E|| / delta_i + slack."""
    rng = synth.stream("theory_stability", seed, "models")
    worst_ratio, failures = 0.0, 0
    for k in range(n_models):
        h = int(rng.integers(1, 5))
        p = int(rng.integers(h + 2, 16))
        lam = _distinct_eigenvalues(rng, h)
        e_norm = float(norms[k % len(norms)])
        gm = synth.gen_gaussian_model(synth.GaussianModelConfig(
            p=p, h=h, d=tuple(1.0 / lam), perturbation=e_norm,
            s_diag=2.0 * lam.max() * (1 + e_norm) ** 2 + 1.0, seed=seed * 1000 + k))
        l_base = gm.k_jh_base @ np.linalg.inv(gm.k_hh) @ gm.k_jh_base.T
        vals, u = _top_eigvecs(l_base, h)
        _, u_t = _top_eigvecs(gm.l, h)
        kinv = float(np.linalg.norm(np.linalg.inv(gm.k_hh), 2))
        e_true = float(np.linalg.norm(gm.k_jh - gm.k_jh_base, 2))
        for i in range(h):
            others = np.abs(vals[i] - np.delete(vals, i))
            delta = min(vals[i], others.min()) if h > 1 else vals[i]
            bound = 4.0 * kinv * e_true / delta + slack
            err = _signed_error(u_t[:, i], u[:, i])
            worst_ratio = max(worst_ratio, err / bound)
            failures += int(err > bound)
    return {"check": "stability", "seed": seed, "models": n_models, "norms": list(norms),
            "max_error_over_bound": worst_ratio, "failures": failures, "passed": failures == 0}


def check_misspecification(n_models: int = 100, seed: int = 0, n_obs: int = 1000) -> dict:
    """Rank-one fit under omitted confounders: direction bound and conditional-mean bound.

    The true ``E[Q | o]`` comes from Gaussian conditioning on the joint
    covariance, independently of the closed form used by the bound.
    """
    rng = synth.stream("theory_misspec", seed, "models")
    dir_fail = mean_fail = 0
    worst_dir = worst_mean = 0.0
    max_oracle_gap = 0.0
    for _ in range(n_models):
        h = int(rng.integers(2, 5))
        p = int(rng.integers(h + 2, 16))
        k = rng.standard_normal((p, h)) / np.sqrt(p)
        d = np.empty(h)
        d[0] = rng.uniform(0.5, 2.0)
        delta = k[:, 0] @ k[:, 0] / d[0]
        conf = sum(np.outer(k[:, j], k[:, j]) for j in range(1, h))
        # scale confounder strengths so that ||E|| is a random fraction of delta/2
        frac = rng.uniform(0.05, 1.0)
        d[1:] = np.linalg.norm(conf, 2) / (frac * delta / 2)
        d[1:] *= rng.uniform(1.0, 1.5, h - 1)
        e_mat = sum(np.outer(k[:, j], k[:, j]) / d[j] for j in range(1, h))
        e_op = float(np.linalg.norm(e_mat, 2))
        a_mat = np.outer(k[:, 0], k[:, 0]) / d[0]
        u_true = k[:, 0] / np.linalg.norm(k[:, 0])
        _, v = _top_eigvecs(a_mat + e_mat, 1)
        v = v[:, 0]
        s = 1.0 if u_true @ v >= 0 else -1.0
        dir_err = float(np.linalg.norm(v - s * u_true))
        dir_bound = 2 * e_op / delta
        worst_dir = max(worst_dir, dir_err / dir_bound)
        dir_fail += int(dir_err > dir_bound + 1e-12)

        l_star = a_mat + e_mat
        s_jj = (np.linalg.eigvalsh(l_star).max() + 1.0) * np.eye(p)
        joint = np.block([[s_jj, k], [k.T, np.diag(d)]])
        cov = np.linalg.inv(joint)
        obs = rng.standard_normal((n_obs, p)) * rng.uniform(0.5, 3.0)
        oracle = obs @ np.linalg.solve(cov[:p, :p], cov[:p, p])     # Sigma_HJ Sigma_JJ^-1 o, first latent
        closed = -(np.linalg.norm(k[:, 0]) / d[0]) * (obs @ u_true)
        max_oracle_gap = max(max_oracle_gap, float(np.max(np.abs(oracle - closed))))
        mis = -(np.linalg.norm(k[:, 0]) / d[0]) * (obs @ (s * v))
        mean_bound = 2 * e_op / np.linalg.norm(k[:, 0]) * np.linalg.norm(obs, axis=1)
        gap = np.abs(mis - oracle)
        worst_mean = max(worst_mean, float(np.max(gap / mean_bound)))
        mean_fail += int(np.sum(gap > mean_bound + 1e-9))
    return {"check": "misspecification", "seed": seed, "models": n_models, "observations": n_obs,
            "max_direction_error_over_bound": worst_dir, "direction_failures": dir_fail,
            "max_mean_error_over_bound": worst_mean, "mean_failures": mean_fail,
            "oracle_closed_form_gap": max_oracle_gap,
            "passed": dir_fail == 0 and mean_fail == 0 and max_oracle_gap < 1e-8}


def _slope(ns, errs) -> float:
    return float(np.polyfit(np.log(ns), np.log(errs), 1)[0])


def spectral_rate_errors(seed: int, ns: Sequence[int] = RATE_NS, c0: float = 3.0,
                         tau: float = 1.0, loading_scale: float = 1.2) -> list[float]:
    """max_i ||u^_i - u_i|| from SPLR on the sample precision, gamma_n = c0 sqrt(log p / n)."""
    errs = []
    for n in ns:
        gm = synth.gen_gaussian_model(synth.GaussianModelConfig(n=n, seed=seed,
                                                                loading_scale=loading_scale))
        h = gm.k_hh.shape[0]
        theta = moments.precision(moments.covariance(gm.samples)).theta
        d = splr.decompose(theta, c0 * np.sqrt(np.log(gm.l.shape[0]) / n), tau)
        _, u_hat = _top_eigvecs(d.l, h)
        _, u = _top_eigvecs(gm.l, h)
        errs.append(max(_signed_error(u_hat[:, i], u[:, i]) for i in range(h)))
    return errs


def tensor_rate_errors(seed: int, ns: Sequence[int] = RATE_NS) -> list[float]:
    """max over states of ||mu^ - mu|| on the second-order-insufficient regime (c = 1)."""
    errs = []
    for n in ns:
        d = synth.gen_regime_b(synth.RegimeBConfig(n=n, c=1.0, seed=seed))
        fit = pipeline.fit_tensor(d.scores, partition=d.partition, anchor_means=d.means, seed=seed)
        errs.append(float(np.max(np.linalg.norm(fit.means - d.means, axis=1))))
    return errs


def check_rate(kind: str, seeds: Iterable[int] = range(10), ns: Sequence[int] = RATE_NS,
               target: float = -0.5, tol: float = 0.15) -> dict:
    """Log-log slope of the seed-averaged error against n; per-seed slopes are informational."""
    fn = {"spectral": spectral_rate_errors, "tensor": tensor_rate_errors}[kind]
    seeds = list(seeds)
    errs = np.array([fn(s, ns) for s in seeds])
    mean = errs.mean(axis=0)
    slope = _slope(ns, mean)
    per_seed = [{"seed": s, "slope": _slope(ns, e), "errors": e.tolist(),
                 "passed": abs(_slope(ns, e) - target) <= tol} for s, e in zip(seeds, errs)]
    return {"check": f"{kind}_rate", "ns": list(ns), "mean_errors": mean.tolist(),
            "slope": slope, "target": target, "tolerance": tol,
            "passed": abs(slope - target) <= tol, "per_seed": per_seed}


def theorem_suite(seed_count: int = 10, n_exact: int = 50, n_stability: int = 100,
                  n_misspec: int = 100, rate_ns: Sequence[int] = RATE_NS) -> RunReport:
    """Run the five theory checks; model counts are spread evenly over the seeds."""
    if seed_count < 1:
        raise InputError("seed_count must be positive")
    t0 = time.perf_counter()
    seeds = list(range(seed_count))
    rows: list[dict] = []

    def spread(total):
        base, extra = divmod(total, seed_count)
        return [base + (i < extra) for i in range(seed_count)]

    for check, total in ((check_exact_recovery, n_exact), (check_stability, n_stability),
                         (check_misspecification, n_misspec)):
        for s, count in zip(seeds, spread(total)):
            if count:
                rows.append(check(n_models=count, seed=s))
    rates = {}
    for kind in ("spectral", "tensor"):
        res = check_rate(kind, seeds, rate_ns)
        rates[kind] = res
        for ps in res["per_seed"]:
            rows.append({"check": res["check"], **ps})
    checks = {}
    for name in CHECK_NAMES[:3]:
        sel = [r for r in rows if r["check"] == name]
        checks[name] = {"passed": all(r["passed"] for r in sel), "seeds": len(sel)}
    for kind, res in rates.items():
        checks[res["check"]] = {"passed": res["passed"], "slope": res["slope"],
                                "mean_errors": res["mean_errors"], "ns": res["ns"]}
    return RunReport("check-theory", {"seed_count": seed_count, "n_exact": n_exact,
                                      "n_stability": n_stability, "n_misspec": n_misspec,
                                      "rate_ns": list(rate_ns)},
                     rows, {}, time.perf_counter() - t0, {"seeds": seeds},
                     {"checks": checks})
