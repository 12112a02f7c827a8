import numpy as np
import pytest

from kalgrad import expfam
from kalgrad.errors import DomainError, OutOfSupportError

from conftest import random_spd

FAMILIES = ["gaussian", "bernoulli", "categorical"]


def make_family(kind, rng=None):
    if kind == "gaussian":
        rng = rng or np.random.default_rng(0)
        return expfam.gaussian(random_spd(rng, 2, scale=0.5))
    if kind == "bernoulli":
        return expfam.bernoulli()
    return expfam.categorical(3)


def random_interior_mean(family, rng):
    if family.kind == "gaussian":
        return rng.standard_normal(family.mean_dim)
    if family.kind == "bernoulli":
        return np.array([rng.uniform(0.05, 0.95)])
    probs = rng.uniform(0.1, 1.0, family.num_classes)
    probs /= probs.sum()
    return probs[:-1]


def random_observation(family, rng):
    if family.kind == "gaussian":
        return rng.standard_normal(family.mean_dim)
    if family.kind == "bernoulli":
        return int(rng.integers(2))
    return int(rng.integers(family.num_classes))


class TestSufficientStats:
    def test_gaussian_passthrough(self):
        fam = expfam.gaussian(np.eye(2))
        np.testing.assert_array_equal(
            expfam.sufficient_stats(fam, np.array([1.5, -2.0])), [1.5, -2.0]
        )

    def test_categorical_reference_class(self):
        fam = expfam.categorical(3)
        np.testing.assert_array_equal(expfam.sufficient_stats(fam, 2), [0.0, 0.0])
        np.testing.assert_array_equal(expfam.sufficient_stats(fam, 0), [1.0, 0.0])

    def test_bernoulli(self):
        fam = expfam.bernoulli()
        np.testing.assert_array_equal(expfam.sufficient_stats(fam, 1), [1.0])
        np.testing.assert_array_equal(expfam.sufficient_stats(fam, 0), [0.0])

    def test_out_of_support(self):
        with pytest.raises(OutOfSupportError):
            expfam.sufficient_stats(expfam.categorical(3), 3)
        with pytest.raises(OutOfSupportError):
            expfam.sufficient_stats(expfam.bernoulli(), 2)
        with pytest.raises(OutOfSupportError):
            expfam.sufficient_stats(expfam.bernoulli(), 0.5)


class TestCovSuffstats:
    def test_gaussian_fixed(self):
        fam = expfam.gaussian(np.diag([0.1, 0.1]))
        np.testing.assert_array_equal(
            expfam.cov_suffstats(fam, np.zeros(2)), np.diag([0.1, 0.1])
        )

    def test_bernoulli_symmetric_point(self):
        np.testing.assert_allclose(
            expfam.cov_suffstats(expfam.bernoulli(), [0.5]), [[0.25]]
        )

    def test_categorical_formula(self):
        cov = expfam.cov_suffstats(expfam.categorical(3), [0.2, 0.3])
        np.testing.assert_allclose(cov, [[0.16, -0.06], [-0.06, 0.21]], atol=1e-15)

    def test_categorical_monte_carlo(self):
        # Oracle: empirical covariance of one-hot samples.
        fam = expfam.categorical(3)
        yhat = np.array([0.2, 0.3])
        rng = np.random.default_rng(2024)
        n = 1_000_000
        draws = expfam.sample(fam, yhat, rng, size=n)
        stats = expfam._suffstats_batch(fam, draws)
        emp = np.cov(stats.T, ddof=1)
        exact = expfam.cov_suffstats(fam, yhat)
        centered = stats - stats.mean(axis=0)
        prods = centered[:, :, None] * centered[:, None, :]
        se = prods.std(axis=0, ddof=1) / np.sqrt(n)
        assert np.all(np.abs(emp - exact) <= 3.0 * se)

    def test_boundary_raises(self):
        with pytest.raises(DomainError):
            expfam.cov_suffstats(expfam.bernoulli(), [0.0])
        with pytest.raises(DomainError):
            expfam.cov_suffstats(expfam.bernoulli(), [1.0])
        with pytest.raises(DomainError):
            expfam.cov_suffstats(expfam.categorical(3), [0.6, 0.4])


class TestLogDensity:
    def test_gaussian_mode_at_mean(self):
        fam = expfam.gaussian(np.array([[1.0]]))
        at_mean = expfam.log_density(fam, [0.7], [0.7])
        for other in (0.1, 0.5, 1.2):
            assert at_mean > expfam.log_density(fam, [0.7], [other])

    def test_bernoulli_symmetry(self):
        fam = expfam.bernoulli()
        assert expfam.log_density(fam, 0, [0.5]) == expfam.log_density(fam, 1, [0.5])

    def test_gaussian_difference(self):
        # Oracle: closed-form Gaussian log-density difference.
        fam = expfam.gaussian(np.array([[1.0]]))
        diff = expfam.log_density(fam, [0.0], [1.0]) - expfam.log_density(fam, [0.0], [0.0])
        assert abs(diff - (-0.5)) < 1e-12


def fd_grad_wrt_mean(family, y, yhat, h=1e-6):
    grad = np.zeros(family.mean_dim)
    for j in range(family.mean_dim):
        e = np.zeros(family.mean_dim)
        e[j] = h
        grad[j] = (
            expfam.log_density(family, y, yhat + e)
            - expfam.log_density(family, y, yhat - e)
        ) / (2 * h)
    return grad


class TestGradLogp:
    @pytest.mark.parametrize("kind", FAMILIES)
    def test_zero_at_mean_stats(self, kind, rng):
        family = make_family(kind, rng)
        yhat = random_interior_mean(family, rng)
        if family.kind == "gaussian":
            y = yhat.copy()
            grad = expfam.grad_logp_wrt_mean(family, y, yhat)
            np.testing.assert_allclose(grad, 0.0, atol=1e-14)

    def test_gaussian_forced(self):
        fam = expfam.gaussian(np.array([[2.0]]))
        np.testing.assert_allclose(
            expfam.grad_logp_wrt_mean(fam, [3.0], [1.0]), [1.0]
        )

    def test_bernoulli_matches_fd(self):
        fam = expfam.bernoulli()
        grad = expfam.grad_logp_wrt_mean(fam, 1, [0.25])
        fd = fd_grad_wrt_mean(fam, 1, np.array([0.25]))
        np.testing.assert_allclose(grad, fd, rtol=1e-6)

    @pytest.mark.parametrize("kind", FAMILIES)
    def test_matches_fd_100_random_pairs(self, kind, rng):
        family = make_family(kind, rng)
        for _ in range(100):
            yhat = random_interior_mean(family, rng)
            y = random_observation(family, rng)
            grad = expfam.grad_logp_wrt_mean(family, y, yhat)
            fd = fd_grad_wrt_mean(family, y, yhat)
            np.testing.assert_allclose(grad, fd, rtol=1e-6, atol=1e-8)

    def test_boundary_raises(self):
        with pytest.raises(DomainError):
            expfam.grad_logp_wrt_mean(expfam.bernoulli(), 1, [1.0])


class TestFisherWrtMean:
    def test_gaussian_inverse_cov(self, rng):
        r = random_spd(rng, 3)
        fam = expfam.gaussian(r)
        fisher = expfam.fisher_wrt_mean(fam, np.zeros(3))
        np.testing.assert_allclose(fisher @ r, np.eye(3), atol=1e-12)

    def test_bernoulli_half(self):
        np.testing.assert_allclose(
            expfam.fisher_wrt_mean(expfam.bernoulli(), [0.5]), [[4.0]]
        )

    def test_categorical_product_check(self):
        fam = expfam.categorical(3)
        yhat = np.array([0.2, 0.3])
        fisher = expfam.fisher_wrt_mean(fam, yhat)
        cov = expfam.cov_suffstats(fam, yhat)
        np.testing.assert_allclose(fisher @ cov, np.eye(2), atol=1e-10)

    @pytest.mark.parametrize("kind", FAMILIES)
    def test_fisher_times_cov_is_identity(self, kind, rng):
        family = make_family(kind, rng)
        for _ in range(20):
            yhat = random_interior_mean(family, rng)
            prod = expfam.fisher_wrt_mean(family, yhat) @ expfam.cov_suffstats(family, yhat)
            np.testing.assert_allclose(prod, np.eye(family.mean_dim), atol=1e-10)


class TestSample:
    def test_gaussian_law_of_large_numbers(self):
        fam = expfam.gaussian(np.array([[0.49]]))
        rng = np.random.default_rng(7)
        n = 100_000
        draws = expfam.sample(fam, [1.3], rng, size=n)
        assert abs(draws.mean() - 1.3) < 4.0 * np.sqrt(0.49 / n)

    def test_bernoulli_near_degenerate(self):
        fam = expfam.bernoulli()
        rng = np.random.default_rng(8)
        draws = expfam.sample(fam, [1.0 - 1e-9], rng, size=10_000)
        assert draws.mean() >= 0.999

    def test_categorical_frequencies(self):
        fam = expfam.categorical(3)
        rng = np.random.default_rng(9)
        draws = expfam.sample(fam, [1 / 3, 1 / 3], rng, size=10_000)
        for k in range(3):
            assert abs((draws == k).mean() - 1 / 3) < 0.02

    def test_single_draw_types(self, rng):
        assert isinstance(expfam.sample(expfam.bernoulli(), [0.4], rng), int)
        assert isinstance(expfam.sample(expfam.categorical(4), [0.2, 0.2, 0.2], rng), int)
        draw = expfam.sample(expfam.gaussian(np.eye(2)), np.zeros(2), rng)
        assert draw.shape == (2,)


class TestScoreIdentities:
    @pytest.mark.parametrize("kind", FAMILIES)
    def test_score_mean_is_zero(self, kind):
        # E[score] = 0 under the model; Monte Carlo within 4 standard errors.
        rng = np.random.default_rng(31)
        family = make_family(kind)
        yhat = random_interior_mean(family, rng)
        n = 100_000
        draws = expfam.sample(family, yhat, rng, size=n)
        stats = expfam._suffstats_batch(family, draws)
        prec = expfam.fisher_wrt_mean(family, yhat)
        scores = (stats - yhat) @ prec
        se = scores.std(axis=0, ddof=1) / np.sqrt(n)
        assert np.all(np.abs(scores.mean(axis=0)) <= 4.0 * se)

    @pytest.mark.parametrize("kind", FAMILIES)
    def test_score_outer_product_matches_fisher(self, kind):
        # The two Fisher definitions (expected score outer product vs.
        # inverse covariance of T) agree; Monte Carlo within 3 SE.
        rng = np.random.default_rng(33)
        family = make_family(kind)
        yhat = random_interior_mean(family, rng)
        n = 100_000
        draws = expfam.sample(family, yhat, rng, size=n)
        stats = expfam._suffstats_batch(family, draws)
        prec = expfam.fisher_wrt_mean(family, yhat)
        scores = (stats - yhat) @ prec
        outers = scores[:, :, None] * scores[:, None, :]
        emp = outers.mean(axis=0)
        se = outers.std(axis=0, ddof=1) / np.sqrt(n)
        assert np.all(np.abs(emp - prec) <= 3.0 * se + 1e-12)


class TestNatgradOfExpectation:
    def test_constant_function(self, rng):
        fam = expfam.bernoulli()
        out = expfam.natgrad_of_expectation(fam, [0.3], lambda y: 2.5, 500, rng)
        np.testing.assert_allclose(out, 0.0, atol=1e-12)

    def test_gaussian_identity_function(self):
        # Oracle: Cov(y, y) = R = 1 for the scalar unit gaussian.
        fam = expfam.gaussian(np.array([[1.0]]))
        rng = np.random.default_rng(17)
        n = 40_000
        out = expfam.natgrad_of_expectation(fam, [0.0], lambda y: float(y[0]), n, rng)
        assert abs(out[0] - 1.0) < 5.0 / np.sqrt(n)

    def test_bernoulli_variance(self):
        fam = expfam.bernoulli()
        rng = np.random.default_rng(18)
        n = 40_000
        out = expfam.natgrad_of_expectation(fam, [0.5], lambda y: float(y), n, rng)
        assert abs(out[0] - 0.25) < 5.0 / np.sqrt(n)

    def test_single_sample_is_zero(self, rng):
        out = expfam.natgrad_of_expectation(
            expfam.bernoulli(), [0.5], lambda y: float(y), 1, rng
        )
        np.testing.assert_array_equal(out, [0.0])


class TestConstructors:
    def test_gaussian_requires_spd(self):
        with pytest.raises(ValueError):
            expfam.gaussian(np.array([[0.0]]))

    def test_categorical_requires_two_classes(self):
        with pytest.raises(ValueError):
            expfam.categorical(1)

    def test_mean_dims(self):
        assert expfam.gaussian(np.eye(3)).mean_dim == 3
        assert expfam.bernoulli().mean_dim == 1
        assert expfam.categorical(5).mean_dim == 4
