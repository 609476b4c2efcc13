import numpy as np
import pytest
from numpy.testing import assert_allclose

from relstat.gp import (
    Dataset, JitterPolicy, SingularCovarianceError, build_covariance,
    decompose_posterior, nll, nll_and_grad, nll_grad, predict, rmse, sample_prior,
)
from relstat.kernels import (
    Constant, Linear, ParamVector, Periodic, Product, SquaredExp, Sum, WhiteNoise,
    bind, gram,
)

from kernel_factory import COVERAGE, noisy_params, random_kernel, with_noise

LOG_2PI = np.log(2 * np.pi)


def nat(expr, *values):
    return ParamVector.from_natural(expr, values)


def dense_nll(K, y):
    """Gaussian negative log density from an explicit inverse and determinant."""
    sign, logdet = np.linalg.slogdet(K)
    assert sign > 0
    return 0.5 * y @ np.linalg.inv(K) @ y + 0.5 * logdet + 0.5 * y.size * LOG_2PI


def jittered(K, policy=JitterPolicy()):
    return K + policy.base * np.mean(np.diag(K)) * np.eye(K.shape[0])


class TestDataset:
    def test_sorts_and_validates(self):
        d = Dataset("a", [3.0, 1.0, 2.0], [30.0, 10.0, 20.0])
        assert_allclose(d.t, [1, 2, 3])
        assert_allclose(d.y, [10, 20, 30])
        assert d.X.shape == (3, 1)
        with pytest.raises(ValueError):
            Dataset("b", [1.0, 2.0], [1.0])
        with pytest.raises(ValueError):
            Dataset("c", [1.0, np.nan], [1.0, 2.0])
        with pytest.raises(ValueError):
            Dataset("d", [], [])

    def test_split(self):
        d = Dataset("a", np.arange(10.0), np.arange(10.0))
        train, test = d.split(3)
        assert len(train) == 7 and len(test) == 3
        assert_allclose(test.t, [7, 8, 9])
        assert d.split(0) == (d, None)
        with pytest.raises(ValueError):
            d.split(10)


class TestCovariance:
    def test_white_noise_identity(self):
        X = np.array([0.0, 1.0, 2.0])
        assert_allclose(build_covariance(WhiteNoise(), nat(WhiteNoise(), 1.0), X, X), np.eye(3))

    def test_constant(self):
        assert_allclose(build_covariance(Constant(), nat(Constant(), 2.0), [0.0, 5.0], [1.0, 3.0]), np.full((2, 2), 2.0))

    def test_uses_bound_params(self):
        k = bind(SquaredExp(), np.log([1.5, 0.7]))
        X = np.linspace(0, 1, 4)
        assert_allclose(build_covariance(k, None, X), gram(k, nat(k, 1.5, 0.7), X))


class TestNLL:
    def test_scalar_cases(self):
        d0 = Dataset("a", [0.0], [0.0])
        d1 = Dataset("a", [0.0], [1.0])
        p = nat(Constant(), 1.0)
        tiny = JitterPolicy(base=1e-300)
        assert nll(Constant(), p, d0, tiny) == pytest.approx(0.5 * LOG_2PI, abs=1e-12)
        assert nll(Constant(), p, d1, tiny) == pytest.approx(0.5 + 0.5 * LOG_2PI, abs=1e-12)

    def test_scalar_density(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            s2, y = rng.uniform(0.1, 5), rng.normal()
            d = Dataset("a", [0.0], [y])
            v = nll(WhiteNoise(), nat(WhiteNoise(), s2), d, JitterPolicy(base=1e-300))
            assert v == pytest.approx(0.5 * y**2 / s2 + 0.5 * np.log(s2) + 0.5 * LOG_2PI, rel=1e-13)

    def test_dense_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(30):
            expr = random_kernel(rng, 2)
            k = with_noise(expr)
            p = noisy_params(expr, rng)
            X = rng.uniform(-2, 2, 3)
            d = Dataset("a", X, rng.normal(size=3))
            K = jittered(gram(k, p, d.X))
            assert nll(k, p, d) == pytest.approx(dense_nll(K, d.y), rel=1e-8, abs=1e-8)

    def test_singular_raises(self):
        d = Dataset("a", np.arange(5.0), np.ones(5))
        bad = JitterPolicy(base=-1.0, max_escalations=0)
        with pytest.raises(SingularCovarianceError, match="LIN"):
            nll(Linear(), nat(Linear(), 1.0, 0.0), d, bad)

    def test_jitter_escalates(self):
        d = Dataset("a", np.arange(5.0), np.arange(5.0))
        value, _, used = nll_and_grad(Linear(), nat(Linear(), 1.0, 0.0), d)
        assert np.isfinite(value) and used >= 1e-8 * np.mean(np.diag(gram(Linear(), nat(Linear(), 1.0, 0.0), d.X)))

    def test_more_jitter_never_lowers_logdet(self):
        d = Dataset("a", np.linspace(0, 1, 6), np.zeros(6))
        k, p = SquaredExp(), nat(SquaredExp(), 1.0, 0.5)
        values = [nll(k, p, d, JitterPolicy(base=b)) for b in (1e-8, 1e-6, 1e-4, 1e-2)]
        assert np.all(np.diff(values) >= 0)


class TestGradient:
    def test_constant_stationary_point(self):
        y = np.array([1.0, -1.0, 2.0, -2.0])
        d = Dataset("a", np.zeros(4) + np.arange(4) * 1e-3, y)
        s2 = y @ y / y.size
        g = nll_grad(WhiteNoise(), nat(WhiteNoise(), s2), d, JitterPolicy(base=1e-300))
        assert g[0] == pytest.approx(0.0, abs=1e-12)

    def test_white_noise_closed_form(self):
        rng = np.random.default_rng(2)
        y = rng.normal(size=7)
        d = Dataset("a", np.arange(7.0), y)
        mle = y @ y / y.size
        for s2 in (0.3 * mle, mle * 0.999, mle * 1.001, 3 * mle):
            g = nll_grad(WhiteNoise(), nat(WhiteNoise(), s2), d, JitterPolicy(base=1e-300))[0]
            assert g == pytest.approx(0.5 * (y.size - y @ y / s2), rel=1e-10)
            assert np.sign(g) == np.sign(s2 - mle)

    @pytest.mark.parametrize("expr", COVERAGE, ids=str)
    def test_finite_differences(self, expr):
        rng = np.random.default_rng(4)
        k = with_noise(expr)
        for _ in range(3):
            p = noisy_params(expr, rng).values
            d = Dataset("a", rng.uniform(-2, 2, 10), rng.normal(size=10))
            g = nll_grad(k, p, d)
            h = 1e-6
            for i in range(p.size):
                e = np.zeros_like(p)
                e[i] = h
                fd = (nll(k, p + e, d) - nll(k, p - e, d)) / (2 * h)
                assert abs(g[i] - fd) <= 1e-4 * max(abs(fd), 1e-3)


class TestPredict:
    def test_interpolates_without_noise(self):
        X = np.linspace(0, 5, 6)
        d = Dataset("a", X, np.sin(X))
        post = predict(SquaredExp(), nat(SquaredExp(), 1.0, 1.0), d, X, JitterPolicy(base=1e-12))
        assert_allclose(post.mean, d.y, atol=1e-6)
        assert np.all(post.var <= 1e-6)

    def test_reverts_to_prior_far_away(self):
        X = np.linspace(0, 5, 6)
        d = Dataset("a", X, np.sin(X))
        post = predict(SquaredExp(), nat(SquaredExp(), 2.0, 0.5), d, [100.0])
        assert post.mean[0] == pytest.approx(0.0, abs=1e-12)
        assert post.var[0] == pytest.approx(2.0)

    def test_dense_oracle(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            expr = random_kernel(rng, 2)
            k, p = with_noise(expr), noisy_params(expr, rng)
            d = Dataset("a", rng.uniform(-2, 2, 5), rng.normal(size=5))
            Xs = rng.uniform(-2.5, 2.5, 4)
            Kinv = np.linalg.inv(jittered(gram(k, p, d.X)))
            Ks = gram(k, p, Xs, d.X)
            post = predict(k, p, d, Xs)
            assert_allclose(post.mean, Ks @ Kinv @ d.y, rtol=1e-8, atol=1e-8)
            var = np.diag(gram(k, p, Xs) - Ks @ Kinv @ Ks.T)
            assert_allclose(post.var, var, rtol=1e-8, atol=1e-8)


class TestDecomposition:
    def test_single_summand_equals_predict(self):
        k = bind(SquaredExp(), np.log([1.0, 0.8]))
        d = Dataset("a", np.linspace(0, 3, 8), np.cos(np.linspace(0, 3, 8)))
        Xs = np.linspace(-1, 4, 11)
        dec = decompose_posterior(k, None, d, Xs)
        post = predict(k, None, d, Xs)
        assert len(dec.components) == 1
        assert_allclose(dec.components[0].mean, post.mean, atol=1e-12)
        assert_allclose(dec.components[0].var, post.var, atol=1e-12)

    def test_means_sum_to_total(self):
        rng = np.random.default_rng(6)
        for _ in range(20):
            expr = with_noise(Sum((random_kernel(rng, 1), random_kernel(rng, 1))))
            p = noisy_params(expr.terms[0], rng)
            d = Dataset("a", rng.uniform(-2, 2, 12), rng.normal(size=12))
            Xs = rng.uniform(-3, 3, 9)
            dec = decompose_posterior(expr, p, d, Xs)
            assert_allclose(dec.total_mean, predict(expr, p, d, Xs).mean, atol=1e-8)

    def test_periodic_component_tracks_sinusoid(self):
        rng = np.random.default_rng(7)
        t = np.linspace(0, 20, 120)
        trend = 0.5 * np.sin(t / 6.0) + 0.05 * t
        wave = np.sin(2 * np.pi * t / 2.5)
        d = Dataset("a", t, trend + wave + 0.05 * rng.normal(size=t.size))
        k = bind(Sum((SquaredExp(), Periodic(), WhiteNoise())), np.log([1.0, 5.0, 1.0, 1.0, 2.5, 0.0025]))
        dec = decompose_posterior(k, None, d, t)
        per = next(c for c in dec.components if c.description == "PER")
        assert np.corrcoef(per.mean, wave)[0, 1] > 0.9


class TestSamplePrior:
    def test_deterministic(self):
        X = np.linspace(0, 1, 5)
        p = nat(SquaredExp(), 1.0, 0.3)
        a = sample_prior(SquaredExp(), p, X, seed=42)
        b = sample_prior(SquaredExp(), p, X, seed=42)
        assert np.array_equal(a, b)

    def test_moments(self):
        X = np.array([0.0, 0.4, 1.0, 2.5])
        k = Product((SquaredExp(), Periodic()))
        p = nat(k, 1.0, 1.0, 1.0, 0.8, 1.3)  # unit prior variance
        rng = np.random.default_rng(8)
        draws = np.array([sample_prior(k, p, X, rng) for _ in range(10000)])
        assert np.all(np.abs(draws.mean(axis=0)) <= 4 / np.sqrt(10000))
        K = gram(k, p, X)
        emp = np.cov(draws.T, bias=True)
        assert np.linalg.norm(emp - K) / np.linalg.norm(K) < 0.05


class TestRMSE:
    def test_values(self):
        assert rmse([1, 2], [1, 2]) == 0.0
        assert rmse([0, 0], [3, 4]) == pytest.approx(np.sqrt(12.5))
        rng = np.random.default_rng(9)
        a, b = rng.normal(size=50), rng.normal(size=50)
        sq = 0.0
        for u, v in zip(a, b):
            sq += (u - v) ** 2
        assert rmse(a, b) == pytest.approx(np.sqrt(sq / 50), rel=1e-12)

    def test_errors(self):
        with pytest.raises(ValueError):
            rmse([1, 2], [1])
        with pytest.raises(ValueError):
            rmse([], [])
