import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cobalt.decomp import TreeDecomposition, sample_spanning_tree
from cobalt.errors import ValidationError
from cobalt.gp import (
    JITTER,
    Hyperparameters,
    MarginalLikelihood,
    MCMCConfig,
    SaasPriors,
    additive_kernel_matrix,
    edge_kernel,
    fit_posterior,
    matern52,
    posterior_from_hyperparameters,
)

PATH3 = TreeDecomposition(3, ((0, 1), (1, 2)))
EDGE2 = TreeDecomposition(2, ((0, 1),))
QUICK = MCMCConfig(warmup=40, draws=20, thin=1, max_tree_depth=5)


def m52_scalar(r):
    return (1 + np.sqrt(5) * r + 5 * r * r / 3) * np.exp(-np.sqrt(5) * r)


def dense_kernel(tree, hyp, m, A, B):
    """Double loop over rows and edges, written independently of the package."""
    K = np.zeros((len(A), len(B)))
    for i, a in enumerate(A):
        for j, b in enumerate(B):
            total = 0.0
            for c, (u, v) in enumerate(tree.edges):
                s = 0.0
                for var in (u, v):
                    for d in range(var * m, (var + 1) * m):
                        s += (hyp.theta[d] * (a[d] - b[d])) ** 2
                total += hyp.sigma_f2[c] * m52_scalar(np.sqrt(s))
            K[i, j] = total
    return K


def dense_gp(tree, hyp, m, X, y, noise, Xs):
    """Plain GP posterior by explicit matrix inversion."""
    K = dense_kernel(tree, hyp, m, X, X) + np.diag(noise + hyp.noise_res + JITTER)
    Kinv = np.linalg.inv(K)
    ks = dense_kernel(tree, hyp, m, Xs, X)
    kss = np.array([dense_kernel(tree, hyp, m, x[None], x[None])[0, 0] for x in Xs])
    mean = hyp.mu0 + ks @ Kinv @ (y - hyp.mu0)
    var = kss - np.einsum("ij,jk,ik->i", ks, Kinv, ks)
    return mean, var


def random_hyp(rng, D, C):
    return Hyperparameters(
        theta=rng.uniform(0.3, 2.0, D),
        tau=0.1,
        sigma_f2=rng.uniform(0.3, 1.5, C),
        noise_res=rng.uniform(1e-3, 0.05),
        mu0=rng.normal(),
    )


def test_edge_kernel_examples():
    assert edge_kernel(1.7, [1, 2], [0.3, 0.4], [0.3, 0.4]) == 1.7
    assert edge_kernel(1.7, [0, 0], [0.0, 0.0], [5.0, -3.0]) == 1.7
    assert edge_kernel(1.0, [1, 1], [0, 0], [1, 0]) == pytest.approx(0.52399, abs=5e-6)
    assert matern52(1.0) == pytest.approx(m52_scalar(1.0), rel=1e-15)


def test_kernel_matrix_examples():
    rng = np.random.default_rng(0)
    h2 = random_hyp(rng, 4, 1)
    Z = rng.normal(size=(5, 4))
    K = additive_kernel_matrix(EDGE2, h2, 2, Z)
    single = np.array([[edge_kernel(h2.sigma_f2[0], h2.theta, a, b) for b in Z] for a in Z])
    np.testing.assert_allclose(K, single, rtol=1e-14)

    h3 = random_hyp(rng, 6, 2)
    same = np.tile(rng.normal(size=6), (4, 1))
    np.testing.assert_allclose(additive_kernel_matrix(PATH3, h3, 2, same), h3.sigma_f2.sum(), rtol=1e-14)

    Z = rng.normal(size=(4, 6))
    np.testing.assert_allclose(additive_kernel_matrix(PATH3, h3, 2, Z), dense_kernel(PATH3, h3, 2, Z, Z), atol=1e-12)
    with pytest.raises(ValidationError):
        additive_kernel_matrix(PATH3, h3, 2, Z[:, :5])


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 5), st.integers(1, 2), st.integers(2, 15), st.integers(0, 2**31))
def test_kernel_psd(e, m, n, seed):
    rng = np.random.default_rng(seed)
    tree = sample_spanning_tree(e, rng)
    h = random_hyp(rng, e * m, e - 1)
    K = additive_kernel_matrix(tree, h, m, rng.normal(size=(n, e * m)))
    np.testing.assert_allclose(K, K.T, atol=1e-14)
    assert np.linalg.eigvalsh(K).min() >= -1e-8 * np.trace(K)


@pytest.mark.parametrize("tree,m", [(EDGE2, 2), (PATH3, 2), (PATH3, 1)])
@pytest.mark.parametrize("standardize", [False, True])
def test_predict_matches_dense_oracle(tree, m, standardize):
    rng = np.random.default_rng(10 + tree.e + m)
    D = tree.e * m
    X = rng.uniform(-1, 1, size=(6, D))
    y = rng.normal(size=6)
    noise = rng.uniform(0, 0.02, size=6)
    Xs = rng.uniform(-1, 1, size=(10, D))
    h = random_hyp(rng, D, tree.e - 1)
    post = posterior_from_hyperparameters(X, y, noise, tree, m, [h], standardize=standardize)
    p = post.predict(Xs)
    if standardize:
        zm, zs = X.mean(0), X.std(0)
        ym, ys = y.mean(), y.std()
        mean, var = dense_gp(tree, h, m, (X - zm) / zs, (y - ym) / ys, noise / ys**2, (Xs - zm) / zs)
        mean, var = ym + ys * mean, ys**2 * var
    else:
        mean, var = dense_gp(tree, h, m, X, y, noise, Xs)
    np.testing.assert_allclose(p.mean, mean, atol=1e-8)
    np.testing.assert_allclose(p.variance, var, atol=1e-8)


def test_reproduction_at_noiseless_data():
    rng = np.random.default_rng(3)
    X = rng.uniform(size=(6, 4))
    y = rng.normal(size=6)
    h = Hyperparameters(np.full(4, 3.0), 0.1, np.array([1.0]), 1e-12, 0.0)
    post = posterior_from_hyperparameters(X, y, np.zeros(6), EDGE2, 2, [h], standardize=False)
    p = post.predict(X)
    np.testing.assert_allclose(p.mean, y, atol=1e-6)
    assert p.variance.max() <= 1e-6


def test_mixture_moments():
    rng = np.random.default_rng(4)
    X = rng.uniform(size=(5, 4))
    y = rng.normal(size=5)
    h1, h2 = random_hyp(rng, 4, 1), random_hyp(rng, 4, 1)
    Xs = rng.uniform(size=(7, 4))
    p1 = posterior_from_hyperparameters(X, y, None, EDGE2, 2, [h1]).predict(Xs)
    p2 = posterior_from_hyperparameters(X, y, None, EDGE2, 2, [h2]).predict(Xs)
    p = posterior_from_hyperparameters(X, y, None, EDGE2, 2, [h1, h2]).predict(Xs)
    mean = 0.5 * (p1.mean + p2.mean)
    var = 0.5 * (p1.variance + p1.mean**2 + p2.variance + p2.mean**2) - mean**2
    np.testing.assert_allclose(p.mean, mean, atol=1e-10)
    np.testing.assert_allclose(p.variance, var, atol=1e-10)
    # arithmetic of the formula itself: means {0, 2}, variances {1, 1}
    m_, v_ = np.array([0.0, 2.0]), np.array([1.0, 1.0])
    assert m_.mean() == 1.0 and (v_ + m_**2).mean() - m_.mean() ** 2 == 2.0


def test_edge_means_sum_to_total_per_draw():
    rng = np.random.default_rng(5)
    tree = TreeDecomposition(4, ((0, 1), (1, 2), (1, 3)))
    X = rng.uniform(size=(12, 8))
    y = rng.normal(size=12)
    draws = [random_hyp(rng, 8, 3) for _ in range(4)]
    post = posterior_from_hyperparameters(X, y, rng.uniform(0, 0.1, 12), tree, 2, draws)
    Xs = rng.uniform(size=(20, 8))
    total, parts, offsets = post.draw_means(Xs)
    np.testing.assert_allclose(parts.sum(axis=2) + offsets[:, None], total, atol=1e-8)
    p = post.predict(Xs)
    np.testing.assert_allclose(p.edge_means.sum(axis=1) + p.offset, p.mean, atol=1e-8)
    # component moments via coordinate slices agree with the full prediction
    for c, (u, v) in enumerate(tree.edges):
        cols = [2 * u, 2 * u + 1, 2 * v, 2 * v + 1]
        mu, var = post.component_moments(c, Xs[:, cols])
        np.testing.assert_allclose(mu, p.edge_means[:, c], atol=1e-10)
        np.testing.assert_allclose(var, p.edge_vars[:, c], atol=1e-10)


def test_cached_factorization_reproduces_kernel():
    rng = np.random.default_rng(6)
    X = rng.uniform(size=(8, 6))
    y = rng.normal(size=8)
    noise = rng.uniform(0, 0.1, 8)
    h = random_hyp(rng, 6, 2)
    post = posterior_from_hyperparameters(X, y, noise, PATH3, 2, [h])
    L = post.chol[0]
    K = additive_kernel_matrix(PATH3, h, 2, post.Z) + np.diag(noise / post.scaler.y_scale**2 + h.noise_res + JITTER)
    np.testing.assert_allclose(L @ L.T, K, atol=1e-8)


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(7)
    tree = TreeDecomposition(3, ((0, 1), (0, 2)))
    Z = rng.normal(size=(8, 6))
    y = rng.normal(size=8)
    model = MarginalLikelihood(tree, 2, Z, y, rng.uniform(0, 0.1, 8), SaasPriors())
    h = 1e-5
    for _ in range(20):
        u = model.initial_point() + rng.normal(0, 0.7, size=model.dim)
        _, g = model(u)
        fd = np.empty_like(g)
        for i in range(model.dim):
            up, dn = u.copy(), u.copy()
            up[i] += h
            dn[i] -= h
            fd[i] = (model(up)[0] - model(dn)[0]) / (2 * h)
        np.testing.assert_allclose(g, fd, rtol=1e-4, atol=1e-4 * max(1.0, np.abs(fd).max()) * 1e-2)


def test_fit_variance_nonnegative_at_many_points():
    rng = np.random.default_rng(8)
    tree = TreeDecomposition(3, ((0, 1), (1, 2)))
    X = rng.uniform(size=(15, 6))
    y = np.sin(3 * X[:, 0]) + X[:, 3] ** 2 + 0.05 * rng.normal(size=15)
    post = fit_posterior(X, y, np.full(15, 1e-3), tree, 2, np.random.default_rng(9), mcmc=QUICK)
    assert post.n_draws >= 1
    p = post.predict(rng.uniform(-0.5, 1.5, size=(10_000, 6)))
    assert p.variance.min() >= -1e-10
    assert p.edge_vars.min() >= -1e-10
    d = post.diagnostics
    for key in ("rhat_max", "accept_stat", "divergences", "step_size"):
        assert key in d


def test_noiseless_interpolation():
    # the premise "noiseless" is encoded as a near-zero residual floor prior
    tree = TreeDecomposition(1, ())
    rng = np.random.default_rng(0)
    x = np.sort(rng.uniform(0, 1, 5))[:, None]
    h = Hyperparameters(np.array([3.0]), 0.1, np.array([1.0]), 0.0, 0.0)
    K = additive_kernel_matrix(tree, h, 1, x) + 1e-10 * np.eye(5)
    y = np.linalg.cholesky(K) @ rng.normal(size=5)
    post = fit_posterior(x, y, np.zeros(5), tree, 1, np.random.default_rng(1), SaasPriors(0.1, 1e-4))
    np.testing.assert_allclose(post.predict(x).mean, y, atol=1e-3)


def test_default_floor_smooths_small_samples():
    # with the weak default floor, five points are partly explained as noise
    tree = TreeDecomposition(1, ())
    rng = np.random.default_rng(0)
    x = np.sort(rng.uniform(0, 1, 5))[:, None]
    y = np.sin(4 * x[:, 0])
    post = fit_posterior(x, y, np.zeros(5), tree, 1, np.random.default_rng(1))
    assert np.median([d.noise_res for d in post.draws]) > 1e-3
    assert np.all(np.isfinite(post.predict(x).mean))


def test_duplicate_inputs_fit():
    X = np.array([[0.2, 0.3, 0.1, 0.4], [0.2, 0.3, 0.1, 0.4], [0.8, 0.1, 0.5, 0.9]])
    y = np.array([1.0, 2.0, 0.0])
    post = fit_posterior(X, y, np.zeros(3), EDGE2, 2, np.random.default_rng(2), mcmc=QUICK)
    assert post.n_draws > 0
    assert np.all(np.isfinite(post.predict(X).mean))


def test_fit_validation():
    with pytest.raises(ValidationError):
        fit_posterior(np.zeros((1, 4)), [1.0], [0.0], EDGE2, 2, np.random.default_rng(0))
    with pytest.raises(ValidationError):
        fit_posterior(np.zeros((3, 4)), [1.0, np.nan, 2.0], np.zeros(3), EDGE2, 2, np.random.default_rng(0))
    with pytest.raises(ValidationError):
        fit_posterior(np.zeros((3, 5)), [1.0, 0.0, 2.0], np.zeros(3), EDGE2, 2, np.random.default_rng(0))


def test_fit_deterministic_given_rng():
    rng = np.random.default_rng(11)
    X = rng.uniform(size=(10, 4))
    y = rng.normal(size=10)
    a = fit_posterior(X, y, np.zeros(10), EDGE2, 2, np.random.default_rng(3), mcmc=QUICK)
    b = fit_posterior(X, y, np.zeros(10), EDGE2, 2, np.random.default_rng(3), mcmc=QUICK)
    np.testing.assert_array_equal(a.alpha, b.alpha)
    c = fit_posterior(X, y, np.zeros(10), EDGE2, 2, np.random.default_rng(4), mcmc=QUICK, warm_start=a)
    assert c.n_draws == QUICK.draws


def test_hyperparameter_vector_roundtrip():
    rng = np.random.default_rng(12)
    h = random_hyp(rng, 6, 2)
    back = Hyperparameters.from_vector(h.to_vector(), 6, 2)
    np.testing.assert_allclose(back.theta, h.theta)
    np.testing.assert_allclose(back.sigma_f2, h.sigma_f2)
    assert back.mu0 == pytest.approx(h.mu0)
