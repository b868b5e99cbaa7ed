import itertools
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import multivariate_normal, norm

from care import moments, synth, tensor
from care.errors import InputError, NumericalError
from care.partition import from_groups
from care.pipeline import fit_tensor


def planted_mixture(rng, sizes=(4, 4, 4), k=4):
    means = rng.standard_normal((k, sum(sizes)))
    pi = rng.dirichlet(np.full(k, 3.0))
    groups = np.split(np.arange(sum(sizes)), np.cumsum(sizes)[:-1])
    return means, pi, groups


def population_moments(means, pi, groups):
    views = [means[:, g] for g in groups]
    t = np.einsum("r,ra,rb,rc->abc", pi, *views)
    pairs = {(a, b): views[a].T @ np.diag(pi) @ views[b] for a, b in ((0, 1), (0, 2), (1, 2))}
    return t, pairs


def _col_match_error(est, true):
    """Smallest max column error over permutations and per-column signs."""
    k = true.shape[1]
    best = np.inf
    for perm in itertools.permutations(range(k)):
        err = 0.0
        for i, j in enumerate(perm):
            err = max(err, min(np.linalg.norm(est[:, j] - true[:, i]),
                               np.linalg.norm(est[:, j] + true[:, i])))
        best = min(best, err)
    return best


def test_rank_one_exact(rng):
    a, b, c = rng.standard_normal(3), rng.standard_normal(4), rng.standard_normal(2)
    t = np.einsum("a,b,c->abc", a, b, c)
    cp = tensor.cp_decompose(t, rank=1, restarts=2)
    assert cp.fit < 1e-10
    np.testing.assert_allclose(cp.full(), t, atol=1e-10)
    for f in cp.factors[1:]:
        np.testing.assert_allclose(np.linalg.norm(f, axis=0), 1.0)
    assert np.all(cp.weights > 0)


@pytest.mark.parametrize("seed", range(5))
def test_rank_four_population_recovery(seed):
    rng = np.random.default_rng(seed)
    means, pi, groups = planted_mixture(rng)
    t, _ = population_moments(means, pi, groups)
    cp = tensor.cp_decompose(t, rank=4, restarts=8, seed=seed)
    assert cp.fit < 1e-8
    for f, g in zip(cp.factors, groups):
        true = means[:, g].T
        true = true / np.linalg.norm(true, axis=0)
        assert _col_match_error(f, true) < 1e-6


@pytest.mark.parametrize("seed", range(5))
def test_population_mixture_recovered(seed):
    rng = np.random.default_rng(seed)
    means, pi, groups = planted_mixture(rng)
    t, pairs = population_moments(means, pi, groups)
    cp = tensor.cp_decompose(t, rank=4, restarts=8, seed=seed)
    view_means, pi_hat = tensor.recover_mixture(cp, pairs)
    est = tensor.assemble_means(view_means, groups)
    est, pi_hat, _ = tensor.align_anchors(est, pi_hat, means)
    np.testing.assert_allclose(est, means, atol=1e-6)
    np.testing.assert_allclose(pi_hat, pi, atol=1e-6)


def test_more_restarts_never_hurt():
    rng = np.random.default_rng(3)
    means, pi, groups = planted_mixture(rng, sizes=(3, 4, 5))
    t, _ = population_moments(means, pi, groups)
    t = t + 0.01 * rng.standard_normal(t.shape)
    fits = [tensor.cp_decompose(t, rank=4, restarts=r, seed=0, algebraic=False).fit
            for r in (1, 2, 4, 8)]
    assert all(b <= a + 1e-15 for a, b in zip(fits, fits[1:]))


def test_cp_errors():
    with pytest.raises(NumericalError):
        tensor.cp_decompose(np.zeros((2, 2, 2)), rank=1)
    with pytest.raises(InputError):
        tensor.cp_decompose(np.ones((2, 2)), rank=1)
    with pytest.raises(InputError):
        tensor.cp_decompose(np.ones((2, 2, 2)), rank=0)


def test_assemble_means_contiguous_and_shuffled(rng):
    means = rng.standard_normal((4, 7))
    groups = [np.array([0, 1]), np.array([2, 3, 4]), np.array([5, 6])]
    vm = [means[:, g].T for g in groups]
    np.testing.assert_array_equal(tensor.assemble_means(vm, groups), means)
    perm = rng.permutation(7)
    shuffled = [np.sort(perm[:3]), np.sort(perm[3:5]), np.sort(perm[5:])]
    vm = [means[:, g].T for g in shuffled]
    np.testing.assert_array_equal(tensor.assemble_means(vm, from_groups(shuffled)), means)
    with pytest.raises(InputError):
        tensor.assemble_means([vm[0][:1], vm[1], vm[2]], shuffled)


def test_assembled_means_reproduce_tensor_blocks():
    rng = np.random.default_rng(0)
    means, pi, groups = planted_mixture(rng)
    t, pairs = population_moments(means, pi, groups)
    cp = tensor.cp_decompose(t, rank=4, restarts=4)
    view_means, pi_hat = tensor.recover_mixture(cp, pairs)
    est = tensor.assemble_means(view_means, groups)
    t_again, _ = population_moments(est, pi_hat, groups)
    assert np.linalg.norm(t_again - t) / np.linalg.norm(t) <= cp.fit + 1e-8


def test_identify_states_ordering():
    v = np.ones(5) / np.sqrt(5)
    means = np.outer([-1.0, 0.8, 1.0, -0.8], v * np.sqrt(5))
    l_hat = np.outer(v, v)
    states = tensor.identify_states(means, l_hat)
    # (q, c): the two top scores are Q=1, lower score within a pair is c=0
    assert list(states) == [0, 2, 3, 1]
    np.testing.assert_array_equal(states, tensor.identify_states(means, 3.0 * l_hat))


def test_identify_states_fewer_components():
    v = np.array([1.0, 0.0])
    means = np.array([[2.0, 0.0], [-1.0, 0.0], [-0.8, 0.0]])
    states = tensor.identify_states(means, np.outer(v, v))
    assert states[0] == 2 and set(states[1:]) == {0, 1}
    m4, w4 = tensor.to_canonical(means, np.array([0.5, 0.25, 0.25]), states)
    np.testing.assert_array_equal(m4[2], m4[3])
    np.testing.assert_allclose(w4, [0.25, 0.25, 0.25, 0.25])


def test_identify_states_ties_warn():
    means = np.zeros((4, 3))
    with pytest.warns(RuntimeWarning, match="tied"):
        tensor.identify_states(means, np.eye(3)[:, :1] @ np.eye(3)[:1])


def test_top_eigenvector_sign_and_zero():
    v = -np.array([0.6, 0.2, 0.2])
    v = v / np.linalg.norm(v)
    out = tensor.top_eigenvector(np.outer(v, v))
    assert out.sum() >= 0
    with pytest.raises(NumericalError):
        tensor.top_eigenvector(np.zeros((3, 3)))


def test_align_anchors_identity_and_shuffle(rng):
    means = rng.standard_normal((4, 6))
    w = np.array([0.1, 0.2, 0.3, 0.4])
    m2, w2, rho = tensor.align_anchors(means, w, means)
    np.testing.assert_array_equal(rho, np.arange(4))
    perm = np.array([2, 0, 3, 1])
    m3, w3, rho = tensor.align_anchors(means[perm], w[perm], means)
    np.testing.assert_array_equal(perm[rho], np.arange(4))
    np.testing.assert_array_equal(m3, means)
    np.testing.assert_array_equal(w3, w)


def test_align_anchors_noisy_monte_carlo():
    ok = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        while True:
            means = rng.standard_normal((4, 8))
            d = np.linalg.norm(means[:, None] - means[None], axis=2)
            if d[np.triu_indices(4, 1)].min() >= 1.0:
                break
        means *= 1.0 / d[np.triu_indices(4, 1)].min()
        anchors = means + 0.1 * rng.standard_normal(means.shape) / np.sqrt(8)
        perm = rng.permutation(4)
        _, _, rho = tensor.align_anchors(means[perm], np.full(4, 0.25), anchors)
        ok += np.array_equal(perm[rho], np.arange(4))
    assert ok >= 99


def test_project_weights():
    w = tensor.project_weights([0.5, -0.1, np.nan, 0.5])
    assert abs(w.sum() - 1) < 1e-12 and np.all(w > 0)


def test_within_covariance_examples():
    rng = np.random.default_rng(0)
    means = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    z = rng.integers(0, 4, 200)
    mix = tensor.fit_within_covariance(means[z], tensor.MixtureModel(means, np.full(4, 0.25)))
    np.testing.assert_allclose(mix.cov, tensor.COV_RIDGE * np.eye(2), atol=1e-15)

    d = synth.gen_regime_a(synth.RegimeAConfig(n=50000, g=1.0, seed=0))
    mix = tensor.fit_within_covariance(d.scores.values, tensor.MixtureModel(d.means, d.weights))
    target = 0.01 * np.eye(d.scores.p)
    assert np.linalg.norm(mix.cov - target) / np.linalg.norm(target) < 0.1

    x = rng.standard_normal((5000, 3))
    x -= x.mean(axis=0)
    zero = tensor.MixtureModel(np.zeros((4, 3)), np.full(4, 0.25))
    mix = tensor.fit_within_covariance(x, zero)
    np.testing.assert_allclose(mix.cov, x.T @ x / x.shape[0] + tensor.COV_RIDGE * np.eye(3), atol=1e-12)


def test_within_covariance_empty_state_falls_back():
    x = np.array([[0.0, 0.0], [0.1, 0.0], [0.0, 0.1], [0.1, 0.1]])
    means = np.array([[0.0, 0.0], [0.05, 0.05], [9.0, 9.0], [-9.0, 9.0]])
    with pytest.warns(RuntimeWarning, match="no items"):
        mix = tensor.fit_within_covariance(x, tensor.MixtureModel(means, np.full(4, 0.25)))
    np.testing.assert_allclose(mix.cov, np.cov(x.T, bias=True) + tensor.COV_RIDGE * np.eye(2))


def test_em_refine_keeps_means_and_weights(rng):
    means = np.array([[0.0, 0.0], [2.0, 0.0], [0.0, 2.0], [2.0, 2.0]])
    z = rng.integers(0, 4, 2000)
    x = means[z] + 0.3 * rng.standard_normal((2000, 2))
    mix = tensor.fit_within_covariance(x, tensor.MixtureModel(means, np.full(4, 0.25)), em_refine=True)
    np.testing.assert_array_equal(mix.means, means)
    assert np.linalg.eigvalsh(mix.cov)[0] > 0
    np.testing.assert_allclose(mix.cov, 0.09 * np.eye(2), atol=0.02)


def test_posterior_equal_means_is_prior(rng):
    mix = tensor.MixtureModel(np.zeros((4, 3)), np.array([0.1, 0.2, 0.3, 0.4]), np.eye(3))
    res = tensor.posterior(rng.standard_normal((10, 3)), mix)
    np.testing.assert_allclose(res.responsibilities, np.tile(mix.weights, (10, 1)), atol=1e-14)
    np.testing.assert_allclose(res.quality_prob, 0.7)


def test_posterior_scalar_density_oracle():
    means = np.array([[-1.0], [-1.0], [2.0], [2.0]])
    w = np.array([0.3, 0.2, 0.1, 0.4])
    mix = tensor.MixtureModel(means, w, np.array([[0.5]]))
    x = np.linspace(-4, 5, 37)[:, None]
    f0 = 0.5 * norm.pdf(x[:, 0], -1.0, np.sqrt(0.5))
    f1 = 0.5 * norm.pdf(x[:, 0], 2.0, np.sqrt(0.5))
    expected = f1 / (f0 + f1)
    np.testing.assert_allclose(tensor.posterior(x, mix).quality_prob, expected, atol=1e-10)


def test_posterior_without_covariance():
    with pytest.raises(InputError):
        tensor.posterior(np.zeros((2, 2)), tensor.MixtureModel(np.zeros((4, 2)), np.full(4, 0.25)))


@given(st.integers(1, 4), st.integers(0, 10 ** 6))
def test_responsibilities_match_direct_density(p, seed):
    rng = np.random.default_rng(seed)
    means = rng.normal(scale=2.0, size=(4, p))
    w = rng.dirichlet(np.ones(4))
    a = rng.standard_normal((p, p))
    cov = a @ a.T + 0.2 * np.eye(p)
    x = rng.normal(scale=2.0, size=(20, p))
    got = tensor.responsibilities(x, means, w, cov)
    dens = np.column_stack([w[k] * multivariate_normal(means[k], cov).pdf(x).reshape(-1)
                            for k in range(4)])
    want = dens / dens.sum(axis=1, keepdims=True)
    np.testing.assert_allclose(got, want, atol=1e-10)
    np.testing.assert_allclose(got.sum(axis=1), 1.0, atol=1e-10)


@settings(max_examples=30)
@given(st.integers(2, 5), st.integers(0, 10 ** 6))
def test_posterior_judge_permutation_invariant(p, seed):
    rng = np.random.default_rng(seed)
    means = rng.standard_normal((4, p))
    a = rng.standard_normal((p, p))
    cov = a @ a.T + 0.5 * np.eye(p)
    x = rng.standard_normal((15, p))
    perm = rng.permutation(p)
    mix = tensor.MixtureModel(means, np.full(4, 0.25), cov)
    mix_p = tensor.MixtureModel(means[:, perm], np.full(4, 0.25), cov[np.ix_(perm, perm)])
    np.testing.assert_allclose(tensor.posterior(x[:, perm], mix_p).responsibilities,
                               tensor.posterior(x, mix).responsibilities, atol=1e-12)


def test_regime_a_states_identified():
    # the Q=1 pair found along the quality axis is the planted Q=1 pair
    hits = 0
    for seed in range(10):
        d = synth.gen_regime_a(synth.RegimeAConfig(n=20000, g=0.5, seed=seed))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            fit = fit_tensor(d.scores, seed=seed)
        est_q1 = fit.means[2:]
        dist = np.linalg.norm(est_q1[:, None] - d.means[None], axis=2)
        hits += set(np.argmin(dist, axis=1)) <= {2, 3}
    assert hits >= 10 * 0.95


def test_regime_a_posterior_accuracy_at_g0():
    d = synth.gen_regime_a(synth.RegimeAConfig(n=50000, g=0.0, seed=0))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        fit = fit_tensor(d.scores, seed=0)
    acc = np.mean((fit.quality_prob(d.scores) > 0.5) == d.q)
    assert acc > 0.99


def test_mixture_weights_valid():
    d = synth.gen_regime_b(synth.RegimeBConfig(n=3000, c=1.0, seed=1))
    fit = fit_tensor(d.scores, partition=d.partition, anchor_means=d.means, seed=1)
    assert abs(fit.weights.sum() - 1) < 1e-8 and np.all(fit.weights > 0)
    assert np.linalg.eigvalsh(fit.mixture.cov)[0] > 0
    assert 0 <= fit.cp.fit <= 1
