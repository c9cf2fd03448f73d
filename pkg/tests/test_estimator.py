"""Tests for least squares on the augmented design."""

import logging
import math

import numpy as np
import pytest

from letc_lab.demand import ConstantPlusUniform, Interaction, ModelParams, PriceBounds, benchmark_theta, mean_demands
from letc_lab.errors import DimensionMismatch, SingularSystem
from letc_lab.estimator import (
    DesignStats,
    Diagnostics,
    History,
    accumulate,
    augment,
    augment_batch,
    design_min_eig,
    fit_or_keep,
    gram_diagnostics,
    ols_fit,
    plug_in_prices,
    price_from_estimate,
    prices_from_estimate,
)
from letc_lab.policies.base import burn_in_prices


def _interaction(x: list[float], p: float, demand: float, t: int) -> Interaction:
    return Interaction(x=np.asarray(x, dtype=np.float64), p=p, demand=demand, t=t)


@pytest.fixture
def noiseless_batch() -> tuple[ModelParams, np.ndarray, np.ndarray, np.ndarray]:
    """200 benchmark interactions at random prices with exact mean demand."""
    rng = np.random.default_rng(0)
    theta = benchmark_theta(3)
    X = ConstantPlusUniform(3).sample(200, rng)
    prices = rng.uniform(0.0, 2.0, 200)
    return theta, X, prices, mean_demands(theta, X, prices)


class TestAugment:
    """Test the augmented feature map."""

    def test_scalar(self) -> None:
        np.testing.assert_array_equal(augment([1.0], 0.5), [1.0, 0.5])

    def test_vector(self) -> None:
        np.testing.assert_array_equal(augment([1.0, 2.0], 3.0), [1.0, 2.0, 3.0, 6.0])

    def test_batch_matches_rows(self) -> None:
        X = np.array([[1.0, 2.0], [1.0, -1.0]])
        prices = np.array([3.0, 0.5])
        Z = augment_batch(X, prices)
        for row, x, p in zip(Z, X, prices):
            np.testing.assert_array_equal(row, augment(x, p))


class TestDesignStats:
    """Test running design statistics."""

    def test_single_interaction(self) -> None:
        stats = accumulate(DesignStats.empty(1), _interaction([1.0], 2.0, 5.0, 1))
        np.testing.assert_allclose(stats.gram, [[1.0, 2.0], [2.0, 4.0]])
        np.testing.assert_allclose(stats.moment, [5.0, 10.0])
        assert stats.count == 1

    def test_order_does_not_matter(self, noiseless_batch) -> None:
        _, X, prices, demands = noiseless_batch
        interactions = [_interaction(x, p, D, t + 1) for t, (x, p, D) in enumerate(zip(X, prices, demands))]
        forward = DesignStats.empty(3)
        backward = DesignStats.empty(3)
        for it in interactions:
            accumulate(forward, it)
        for it in reversed(interactions):
            accumulate(backward, it)
        np.testing.assert_allclose(forward.gram, backward.gram, rtol=1e-10, atol=1e-12)
        np.testing.assert_allclose(forward.moment, backward.moment, rtol=1e-10, atol=1e-12)

    def test_running_mean_matches_batch(self, noiseless_batch) -> None:
        _, X, prices, demands = noiseless_batch
        stats = DesignStats.empty(3)
        for t, (x, p, D) in enumerate(zip(X, prices, demands)):
            accumulate(stats, _interaction(x, p, D, t + 1))
        batch = DesignStats.from_arrays(X, prices, demands)
        np.testing.assert_allclose(stats.gram, batch.gram, rtol=1e-10, atol=1e-12)
        np.testing.assert_allclose(stats.moment, batch.moment, rtol=1e-10, atol=1e-12)

    def test_merged_pools_two_batches(self, noiseless_batch) -> None:
        _, X, prices, demands = noiseless_batch
        first = DesignStats.from_arrays(X[:70], prices[:70], demands[:70])
        second = DesignStats.from_arrays(X[70:], prices[70:], demands[70:])
        pooled = first.merged(second)
        whole = DesignStats.from_arrays(X, prices, demands)
        assert pooled.count == 200
        np.testing.assert_allclose(pooled.gram, whole.gram, rtol=1e-12, atol=1e-14)
        np.testing.assert_allclose(pooled.moment, whole.moment, rtol=1e-12, atol=1e-14)

    def test_dimension_mismatch(self) -> None:
        with pytest.raises(DimensionMismatch):
            accumulate(DesignStats.empty(2), _interaction([1.0], 1.0, 1.0, 1))


class TestOlsFit:
    """Test the least-squares estimate."""

    def test_two_points_determine_the_line(self) -> None:
        """D = 1 at p = 1 and D = 0 at p = 2 give alpha = 2, beta = -1."""
        stats = DesignStats.empty(1)
        accumulate(stats, _interaction([1.0], 1.0, 1.0, 1))
        accumulate(stats, _interaction([1.0], 2.0, 0.0, 2))
        theta = ols_fit(stats)
        assert theta.alpha[0] == pytest.approx(2.0)
        assert theta.beta[0] == pytest.approx(-1.0)

    def test_noiseless_recovery(self, noiseless_batch) -> None:
        theta, X, prices, demands = noiseless_batch
        fitted = ols_fit(DesignStats.from_arrays(X, prices, demands))
        np.testing.assert_allclose(fitted.as_vector(), theta.as_vector(), atol=1e-8)

    def test_constant_price_is_singular(self) -> None:
        """With one price level alpha and beta are not separately identifiable."""
        X = np.ones((10, 1))
        prices = np.ones(10)
        with pytest.raises(SingularSystem):
            ols_fit(DesignStats.from_arrays(X, prices, np.full(10, 0.5)))

    def test_empty_is_singular(self) -> None:
        with pytest.raises(SingularSystem):
            ols_fit(DesignStats.empty(2))

    def test_fit_or_keep_retains_previous(self) -> None:
        previous = ModelParams(alpha=[1.0], beta=[-1.0])
        diag = Diagnostics()
        kept = fit_or_keep(DesignStats.empty(1), previous, diag)
        assert kept is previous
        assert diag.singular_fits == 1


class TestPricing:
    """Test greedy prices from an estimate."""

    @pytest.fixture
    def bounds(self) -> PriceBounds:
        return PriceBounds(0.0, 1.0)

    def test_plug_in_price(self, bounds: PriceBounds) -> None:
        theta_hat = ModelParams(alpha=[1.0], beta=[-1.0])
        assert price_from_estimate(theta_hat, [1.0], bounds) == pytest.approx(0.5)

    def test_no_estimate_uses_midpoint(self, bounds: PriceBounds) -> None:
        diag = Diagnostics()
        prices = prices_from_estimate(None, np.ones((3, 1)), bounds, diag)
        np.testing.assert_array_equal(prices, [0.5, 0.5, 0.5])
        assert diag.fallback_prices == 3

    def test_degenerate_slope_uses_midpoint(self, bounds: PriceBounds) -> None:
        diag = Diagnostics()
        theta_hat = ModelParams(alpha=[1.0], beta=[0.0])
        assert price_from_estimate(theta_hat, [1.0], bounds, diag) == 0.5
        assert diag.fallback_prices == 1

    def test_clipped_to_upper_bound(self, bounds: PriceBounds) -> None:
        """p_hat = 2.8 / 2 = 1.4 clips to 1."""
        diag = Diagnostics()
        theta_hat = ModelParams(alpha=[2.8], beta=[-1.0])
        assert price_from_estimate(theta_hat, [1.0], bounds, diag) == 1.0
        assert diag.clip_activations == 1

    def test_midpoint_fallback_is_logged(self, bounds: PriceBounds, caplog: pytest.LogCaptureFixture) -> None:
        theta_hat = ModelParams(alpha=[1.0], beta=[0.0])
        with caplog.at_level(logging.DEBUG, logger="letc_lab.estimator"):
            plug_in_prices(theta_hat, np.ones((2, 1)), bounds)
        assert "midpoint" in caplog.text


class TestGramDiagnostics:
    """Test the design spectrum summary."""

    def test_identity_gram(self) -> None:
        stats = DesignStats(gram=np.eye(4), moment=np.zeros(4), count=10)
        diag = gram_diagnostics(stats)
        assert diag.trace_inverse == pytest.approx(4.0)
        assert diag.min_eig == pytest.approx(1.0)

    def test_rank_deficient_gram(self) -> None:
        stats = DesignStats(gram=np.diag([1.0, 0.0]), moment=np.zeros(2), count=10)
        assert math.isinf(gram_diagnostics(stats).trace_inverse)

    def test_constant_price_design_is_degenerate(self) -> None:
        X = ConstantPlusUniform(2).sample(50, np.random.default_rng(0))
        assert design_min_eig(X, np.full(50, 0.7)) == pytest.approx(0.0, abs=1e-10)

    def test_empty_design(self) -> None:
        assert math.isnan(design_min_eig(np.empty((0, 2)), np.empty(0)))


class TestBurnInRate:
    """Test how the burn-in fit improves with its length on the benchmark instance."""

    D = 4
    BOUNDS = PriceBounds(0.0, 2.0)

    def _burn_in_stats(self, n: int, rng: np.random.Generator, sigma: float = 0.1) -> DesignStats:
        theta = benchmark_theta(self.D)
        X = ConstantPlusUniform(self.D).sample(n, rng)
        prices = burn_in_prices(n, self.BOUNDS, rng)
        demands = mean_demands(theta, X, prices) + rng.normal(0.0, sigma, n)
        return DesignStats.from_arrays(X, prices, demands)

    def _squared_error(self, n: int, seed: int) -> float:
        theta_hat = ols_fit(self._burn_in_stats(n, np.random.default_rng(seed)))
        return float(np.sum((theta_hat.as_vector() - benchmark_theta(self.D).as_vector()) ** 2))

    def test_doubling_length_halves_squared_error(self) -> None:
        short = np.mean([self._squared_error(500, seed) for seed in range(100)])
        long = np.mean([self._squared_error(1000, seed) for seed in range(100, 200)])
        assert 0.3 <= long / short <= 0.7

    def test_trace_of_inverse_gram_settles(self) -> None:
        """The normalized Gram has a fixed limit, so its inverse trace barely moves past 2000 steps."""
        short = np.mean([gram_diagnostics(self._burn_in_stats(2000, np.random.default_rng(s))).trace_inverse for s in range(10)])
        long = np.mean([gram_diagnostics(self._burn_in_stats(4000, np.random.default_rng(s))).trace_inverse for s in range(10, 20)])
        assert math.isfinite(short)
        assert long == pytest.approx(short, rel=0.1)


class TestHistory:
    """Test the columnar interaction log."""

    def test_from_interactions(self) -> None:
        history = History.from_interactions(
            [_interaction([1.0], 0.5, 1.0, 3), _interaction([1.0], 0.7, 0.8, 4)]
        )
        assert len(history) == 2
        assert history.start == 3
        np.testing.assert_array_equal(history.prices, [0.5, 0.7])

    def test_non_consecutive_steps_rejected(self) -> None:
        with pytest.raises(ValueError):
            History.from_interactions([_interaction([1.0], 0.5, 1.0, 1), _interaction([1.0], 0.5, 1.0, 3)])

    def test_segment(self, noiseless_batch) -> None:
        _, X, prices, demands = noiseless_batch
        history = History(X, prices, demands)
        part = history.segment(11, 21)
        assert len(part) == 10
        assert part.start == 11
        np.testing.assert_array_equal(part.prices, prices[10:20])
        np.testing.assert_array_equal(part.steps, np.arange(11, 21))

    def test_segment_past_the_end_is_empty(self, noiseless_batch) -> None:
        _, X, prices, demands = noiseless_batch
        assert len(History(X, prices, demands).segment(500, 600)) == 0

    def test_within_bounds(self, noiseless_batch) -> None:
        _, X, prices, demands = noiseless_batch
        history = History(X, prices, demands)
        assert history.within(PriceBounds(0.0, 2.0))
        assert not history.within(PriceBounds(0.0, 1.0))
