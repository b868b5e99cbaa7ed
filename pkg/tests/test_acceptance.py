"""End-to-end acceptance criteria, each with its accuracy bar and a wall-clock budget.

Every test records one ``criterion N: PASS/FAIL`` line; the lines are printed
together at the end of the pytest run (see ``conftest.py``). Run just this
suite with ``pytest tests/test_acceptance.py`` or ``python tests/test_acceptance.py``.
"""
import time
import warnings

import numpy as np
import pytest
from scipy.stats import multivariate_normal

from care import harness, partition as pm, splr, synth, tensor

pytestmark = pytest.mark.acceptance

RESULTS: list[str] = []


def record(number: int, name: str, passed: bool, elapsed: float, budget: float, detail: str):
    ok = passed and elapsed < budget
    line = (f"criterion {number:2d} {name}: {'PASS' if ok else 'FAIL'} "
            f"({detail}; {elapsed:.1f}s of {budget:g}s)")
    RESULTS.append(line)
    print(line)
    return ok


def test_criterion_01_graph_aware_partition_study():
    t0 = time.perf_counter()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        rep = harness.bench_d9(seeds=range(10), n=10000)
    elapsed = time.perf_counter() - t0
    ratio = rep.extra["ratio"]
    passed = ratio >= 5.0
    detail = f"median error ratio random/graph-aware {ratio:.2f}, floor 5, target 10 " \
             f"{'met' if ratio >= 10 else 'not met'}"
    assert record(1, "partition study", passed, elapsed, 120, detail)


def test_criterion_02_regime_a_sweep():
    t0 = time.perf_counter()
    rep = harness.bench_regime_a(seeds=range(10), n=50000)
    elapsed = time.perf_counter() - t0
    at1, at0 = rep.aggregate["1"], rep.aggregate["0"]
    best_base = max(at1["mv"]["mean"], at1["avg"]["mean"])
    gains = {m: at1[m]["mean"] - best_base for m in ("care-svd", "care-tensor")}
    floor0 = min(v["mean"] for v in at0.values())
    passed = min(gains.values()) >= 0.10 and floor0 >= 0.95
    detail = (f"g=1 gain over best of MV/AVG: svd {gains['care-svd']:.3f}, "
              f"tensor {gains['care-tensor']:.3f}; g=0 min accuracy {floor0:.3f}")
    assert record(2, "regime A sweep", passed, elapsed, 600, detail)


def test_criterion_03_regime_b_sweep():
    t0 = time.perf_counter()
    rep = harness.bench_regime_b(seeds=range(25))
    elapsed = time.perf_counter() - t0
    at1 = {m: v["mean"] for m, v in rep.aggregate["1"].items()}
    gap = at1["care-tensor"] - at1["care-svd"]
    chance = max(abs(at1[m] - 0.5) for m in ("care-svd", "mv", "avg"))
    passed = gap >= 0.20 and chance <= 0.10
    detail = (f"c=1 tensor - svd {gap:.3f}; max |acc - 0.5| over svd/mv/avg {chance:.3f}")
    assert record(3, "regime B sweep", passed, elapsed, 600, detail)


def test_criterion_04_exact_recovery():
    t0 = time.perf_counter()
    res = harness.check_exact_recovery(n_models=50, seed=0, tol=1e-8)
    elapsed = time.perf_counter() - t0
    assert record(4, "exact recovery", res["passed"], elapsed, 10,
                  f"max eigenvector error {res['max_error']:.2e} over 50 models")


def test_criterion_05_stability():
    t0 = time.perf_counter()
    res = harness.check_stability(n_models=100, seed=0)
    elapsed = time.perf_counter() - t0
    assert record(5, "stability bound", res["passed"], elapsed, 30,
                  f"{res['failures']} violations, worst error/bound "
                  f"{res['max_error_over_bound']:.3f} over 100 models")


def test_criterion_06_misspecification():
    t0 = time.perf_counter()
    res = harness.check_misspecification(n_models=100, seed=0, n_obs=1000)
    elapsed = time.perf_counter() - t0
    assert record(6, "misspecification bounds", res["passed"], elapsed, 60,
                  f"direction violations {res['direction_failures']}, "
                  f"conditional-mean violations {res['mean_failures']}, "
                  f"worst ratios {res['max_direction_error_over_bound']:.3f} / "
                  f"{res['max_mean_error_over_bound']:.3f}")


def test_criterion_07_rates():
    t0 = time.perf_counter()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        spec = harness.check_rate("spectral", seeds=range(10))
        tens = harness.check_rate("tensor", seeds=range(10))
    elapsed = time.perf_counter() - t0
    passed = spec["passed"] and tens["passed"]
    assert record(7, "finite-sample rates", passed, elapsed, 900,
                  f"log-log slopes spectral {spec['slope']:.3f}, tensor {tens['slope']:.3f}, "
                  f"target -0.5 +/- 0.15")


def test_criterion_08_posterior_oracle():
    t0 = time.perf_counter()
    worst_gap = worst_sum = 0.0
    for i in range(1000):
        rng = np.random.default_rng([8, i])
        p = int(rng.integers(1, 5))
        means = rng.normal(scale=1.5, size=(4, p))
        w = rng.dirichlet(np.ones(4))
        a = rng.standard_normal((p, p))
        cov = a @ a.T + 0.5 * np.eye(p)
        x = rng.normal(scale=1.5, size=(int(rng.integers(1, 30)), p))
        got = tensor.responsibilities(x, means, w, cov)
        dens = np.column_stack([w[k] * np.atleast_1d(multivariate_normal(means[k], cov).pdf(x))
                                for k in range(4)])
        want = dens / dens.sum(axis=1, keepdims=True)
        worst_gap = max(worst_gap, float(np.max(np.abs(got - want))))
        worst_sum = max(worst_sum, float(np.max(np.abs(got.sum(axis=1) - 1.0))))
    elapsed = time.perf_counter() - t0
    passed = worst_gap <= 1e-10 and worst_sum <= 1e-10
    assert record(8, "posterior oracle", passed, elapsed, 10,
                  f"max |resp - oracle| {worst_gap:.1e}, max |row sum - 1| {worst_sum:.1e}")


def test_criterion_09_splr_solver():
    t0 = time.perf_counter()
    rises = 0
    for i in range(1000):
        rng = np.random.default_rng([9, i])
        p = int(rng.integers(2, 9))
        a = rng.standard_normal((p, p))
        theta = a @ a.T / p + 0.3 * np.eye(p)
        d = splr.decompose(theta, float(10 ** rng.uniform(-3, 0)), float(10 ** rng.uniform(-1, 1)))
        rises += int(np.any(np.diff(d.objective_trace) > 0))
    recovered = sum(harness.splr_support_recovery(s)["recovered"] for s in range(10))
    elapsed = time.perf_counter() - t0
    passed = rises == 0 and recovered >= 8
    assert record(9, "SPLR solver", passed, elapsed, 60,
                  f"{rises} non-monotone traces of 1000; planted recovery {recovered}/10")


def test_criterion_10_partition_vs_exhaustive():
    t0 = time.perf_counter()
    hits = 0
    for i in range(100):
        rng = np.random.default_rng([10, i])
        p = int(rng.integers(3, 10))
        density = rng.uniform(0.2, 0.9)
        a = rng.uniform(-1, 1, (p, p)) * (rng.random((p, p)) < density)
        s = np.triu(a, 1) + np.triu(a, 1).T + np.eye(p)
        part = pm.partition(s, seed=i)
        _, best = pm.exhaustive_partition(s)
        hits += int(abs(part.cross_mass - best) <= 1e-12 * max(1.0, best))
    elapsed = time.perf_counter() - t0
    assert record(10, "partition vs exhaustive", hits >= 95, elapsed, 60,
                  f"{hits}/100 instances at the exhaustive optimum")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
