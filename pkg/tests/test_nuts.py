import numpy as np
import pytest

from cobalt.nuts import sample_nuts, split_rhat


def gaussian(mu, sd):
    mu, sd = np.asarray(mu, float), np.asarray(sd, float)

    def f(q):
        z = (q - mu) / sd
        return -0.5 * np.dot(z, z), -z / sd

    return f


def test_gaussian_moments():
    mu, sd = np.array([1.0, -2.0, 0.5]), np.array([0.5, 2.0, 1.0])
    res = sample_nuts(gaussian(mu, sd), np.zeros(3), np.random.default_rng(0), warmup=300, draws=2000, thin=1)
    assert res.samples.shape == (2000, 3)
    np.testing.assert_allclose(res.samples.mean(0), mu, atol=0.15 * sd.max())
    np.testing.assert_allclose(res.samples.std(0), sd, rtol=0.15)
    assert 0.6 < res.accept_stat < 0.98
    assert res.divergences == 0


def test_correlated_gaussian():
    cov = np.array([[1.0, 0.9], [0.9, 1.0]])
    P = np.linalg.inv(cov)

    def f(q):
        return -0.5 * q @ P @ q, -P @ q

    res = sample_nuts(f, np.array([2.0, -2.0]), np.random.default_rng(1), warmup=300, draws=3000, thin=1)
    np.testing.assert_allclose(np.cov(res.samples.T), cov, atol=0.15)


def test_deterministic_and_warm_start():
    f = gaussian([0.0, 0.0], [1.0, 1.0])
    a = sample_nuts(f, np.ones(2), np.random.default_rng(2), warmup=50, draws=20)
    b = sample_nuts(f, np.ones(2), np.random.default_rng(2), warmup=50, draws=20)
    np.testing.assert_array_equal(a.samples, b.samples)
    c = sample_nuts(f, a.samples[-1], np.random.default_rng(3), warmup=0, draws=10, step_size=a.step_size, inv_metric=a.inv_metric)
    assert c.step_size == a.step_size and c.samples.shape == (10, 2)


def test_nonfinite_start_rejected():
    with pytest.raises(ValueError):
        sample_nuts(lambda q: (-np.inf, np.zeros_like(q)), np.zeros(2), np.random.default_rng(0), warmup=5, draws=5)


def test_split_rhat():
    rng = np.random.default_rng(4)
    iid = rng.normal(size=(2, 500, 3))
    assert np.all(split_rhat(iid) < 1.02)
    shifted = iid.copy()
    shifted[1] += 3.0
    assert np.all(split_rhat(shifted) > 1.1)
    assert np.all(np.isnan(split_rhat(rng.normal(size=(3, 2)))))
