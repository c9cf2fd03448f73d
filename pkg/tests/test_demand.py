"""Tests for the linear demand environment."""

import numpy as np
import pytest

from letc_lab.demand import (
    ConstantPlusUniform,
    DemandEnvironment,
    DiscreteExample,
    FiniteSupport,
    GaussianShock,
    ModelParams,
    PoissonDemand,
    PriceBounds,
    assumption_report,
    benchmark_theta,
    clip,
    constant_price_theta,
    discrete_example_theta,
    expected_revenue,
    instantaneous_regret,
    mean_demand,
    optimal_price,
    optimal_prices,
    optimal_revenue,
    regret_batch,
)
from letc_lab.errors import DegenerateSlope, DimensionMismatch, PriceOutOfBounds


@pytest.fixture
def unit_theta() -> ModelParams:
    """x'alpha = 1 and x'beta = -1 at x = (1, 0)."""
    return ModelParams(alpha=np.array([1.0, 0.0]), beta=np.array([-1.0, 0.0]))


class TestModelParams:
    """Test the parameter container."""

    def test_vector_round_trip_layout(self) -> None:
        theta = ModelParams.from_vector([1.0, 2.0, -3.0, -4.0])
        np.testing.assert_array_equal(theta.alpha, [1.0, 2.0])
        np.testing.assert_array_equal(theta.beta, [-3.0, -4.0])
        np.testing.assert_array_equal(theta.as_vector(), [1.0, 2.0, -3.0, -4.0])

    def test_null_vector(self) -> None:
        theta = ModelParams(alpha=np.array([1.0]), beta=np.array([-0.5]))
        np.testing.assert_array_equal(theta.null_vector(), [1.0, -1.0])

    def test_mismatched_lengths(self) -> None:
        with pytest.raises(DimensionMismatch):
            ModelParams(alpha=np.ones(2), beta=np.ones(3))

    def test_odd_vector_rejected(self) -> None:
        with pytest.raises(DimensionMismatch):
            ModelParams.from_vector([1.0, 2.0, 3.0])


class TestDemandAndRevenue:
    """Test mean demand, revenue and the optimal price."""

    def test_mean_demand(self, unit_theta: ModelParams) -> None:
        assert mean_demand(unit_theta, [1.0, 0.0], 0.5) == 0.5

    def test_mean_demand_at_zero_price_is_intercept(self, unit_theta: ModelParams) -> None:
        assert mean_demand(unit_theta, [1.0, 0.0], 0.0) == 1.0

    def test_benchmark_instance(self) -> None:
        """The benchmark at x = e1 and p = 0.5 has demand 1 - 0.5."""
        x = np.zeros(4)
        x[0] = 1.0
        assert mean_demand(benchmark_theta(4), x, 0.5) == pytest.approx(0.5)

    def test_dimension_mismatch(self, unit_theta: ModelParams) -> None:
        with pytest.raises(DimensionMismatch):
            mean_demand(unit_theta, [1.0, 0.0, 0.0], 0.5)

    def test_expected_revenue(self, unit_theta: ModelParams) -> None:
        assert expected_revenue(unit_theta, [1.0, 0.0], 0.5) == pytest.approx(0.25)
        assert expected_revenue(unit_theta, [1.0, 0.0], 0.0) == 0.0

    def test_optimal_price(self) -> None:
        assert optimal_price(ModelParams(alpha=[1.0], beta=[-1.0]), [1.0]) == pytest.approx(0.5)
        assert optimal_price(ModelParams(alpha=[1.0], beta=[-2.0]), [1.0]) == pytest.approx(0.25)

    def test_optimal_revenue(self) -> None:
        assert optimal_revenue(ModelParams(alpha=[1.0], beta=[-1.0]), [1.0]) == pytest.approx(0.25)
        assert optimal_revenue(ModelParams(alpha=[2.0], beta=[-1.0]), [1.0]) == pytest.approx(1.0)

    def test_optimal_revenue_is_revenue_at_optimal_price(self) -> None:
        theta = benchmark_theta(5)
        X = ConstantPlusUniform(5).sample(50, np.random.default_rng(0))
        for x in X:
            p = optimal_price(theta, x)
            assert optimal_revenue(theta, x) == pytest.approx(expected_revenue(theta, x, p), rel=1e-12)

    def test_revenue_scales_quadratically_in_alpha(self) -> None:
        theta = ModelParams(alpha=[1.5, 0.3], beta=[-1.0, 0.1])
        scaled = ModelParams(alpha=3.0 * theta.alpha, beta=theta.beta)
        x = [1.0, 0.4]
        assert optimal_revenue(scaled, x) == pytest.approx(9.0 * optimal_revenue(theta, x))

    def test_degenerate_slope(self) -> None:
        theta = ModelParams(alpha=[1.0, 0.0], beta=[0.0, 1.0])
        with pytest.raises(DegenerateSlope):
            optimal_price(theta, [1.0, 0.0])
        with pytest.raises(DegenerateSlope):
            optimal_revenue(theta, [1.0, 0.0])

    def test_discrete_example_stays_in_band(self) -> None:
        """x'alpha and -x'beta lie in [1/4, 3] for the discrete example law."""
        theta = discrete_example_theta(6)
        X = DiscreteExample(6).sample(10_000, np.random.default_rng(1))
        intercepts = X @ theta.alpha
        slopes = -(X @ theta.beta)
        assert intercepts.min() >= 0.25 and intercepts.max() <= 3.0
        assert slopes.min() >= 0.25 and slopes.max() <= 3.0

    def test_revenue_is_concave_in_price(self) -> None:
        theta = benchmark_theta(3)
        rng = np.random.default_rng(5)
        for x in ConstantPlusUniform(3).sample(30, rng):
            p1, p2, t = rng.uniform(0.0, 2.0), rng.uniform(0.0, 2.0), rng.uniform()
            mixed = expected_revenue(theta, x, t * p1 + (1 - t) * p2)
            chord = t * expected_revenue(theta, x, p1) + (1 - t) * expected_revenue(theta, x, p2)
            assert mixed >= chord - 1e-12


class TestClip:
    """Test the clipping operator."""

    @pytest.fixture
    def unit_bounds(self) -> PriceBounds:
        return PriceBounds(0.0, 1.0)

    def test_above(self, unit_bounds: PriceBounds) -> None:
        assert clip(1.5, unit_bounds) == 1.0

    def test_below(self, unit_bounds: PriceBounds) -> None:
        assert clip(-0.2, unit_bounds) == 0.0

    def test_inside(self, unit_bounds: PriceBounds) -> None:
        assert clip(0.7, unit_bounds) == 0.7

    def test_idempotent_on_arrays(self, unit_bounds: PriceBounds) -> None:
        p = np.array([-1.0, 0.3, 2.0])
        once = clip(p, unit_bounds)
        np.testing.assert_array_equal(clip(once, unit_bounds), once)


class TestPriceBounds:
    """Test the feasible interval."""

    def test_default_margin_and_eta_cap(self) -> None:
        bounds = PriceBounds(0.0, 2.0)
        assert bounds.margin == pytest.approx(0.1)
        assert bounds.default_eta_max == pytest.approx(0.5)
        assert bounds.midpoint == 1.0

    def test_empty_interval_rejected(self) -> None:
        with pytest.raises(ValueError):
            PriceBounds(1.0, 1.0)

    def test_margin_too_wide_rejected(self) -> None:
        with pytest.raises(ValueError):
            PriceBounds(0.0, 1.0, margin=0.5)


class TestRegret:
    """Test instantaneous regret."""

    def test_zero_at_optimum(self, unit_theta: ModelParams) -> None:
        assert instantaneous_regret(unit_theta, [1.0, 0.0], 0.5) == 0.0

    def test_quadratic_gap(self, unit_theta: ModelParams) -> None:
        assert instantaneous_regret(unit_theta, [1.0, 0.0], 0.6) == pytest.approx(0.01)

    def test_equals_revenue_difference(self) -> None:
        """The quadratic form matches r*(x) - r(x, p) on random instances."""
        rng = np.random.default_rng(7)
        for _ in range(1000):
            theta = ModelParams(alpha=rng.uniform(0.5, 1.5, 3), beta=-rng.uniform(0.5, 1.5, 3))
            x = rng.uniform(0.0, 1.0, 3)
            p = rng.uniform(0.0, 2.0)
            gap = optimal_revenue(theta, x) - expected_revenue(theta, x, p)
            assert instantaneous_regret(theta, x, p) == pytest.approx(gap, abs=1e-10)

    def test_batch_matches_scalar(self) -> None:
        theta = benchmark_theta(4)
        rng = np.random.default_rng(2)
        X = ConstantPlusUniform(4).sample(20, rng)
        prices = rng.uniform(0.0, 2.0, 20)
        expected = [instantaneous_regret(theta, x, p) for x, p in zip(X, prices)]
        np.testing.assert_allclose(regret_batch(theta, X, prices), expected, rtol=1e-12, atol=1e-15)

    def test_non_negative_on_feasible_prices(self) -> None:
        theta = benchmark_theta(4)
        X = ConstantPlusUniform(4).sample(200, np.random.default_rng(4))
        for p in np.linspace(0.0, 2.0, 9):
            assert np.all(regret_batch(theta, X, np.full(200, p)) >= -1e-12)

    def test_batch_flags_degenerate_rows(self) -> None:
        theta = ModelParams(alpha=[1.0, 1.0], beta=[-1.0, 1.0])
        prices, degenerate = optimal_prices(theta, np.array([[1.0, 0.0], [1.0, 1.0]]))
        assert degenerate.tolist() == [False, True]
        assert np.isnan(prices[1])


class TestSamplers:
    """Test the feature laws."""

    def test_constant_plus_uniform(self) -> None:
        X = ConstantPlusUniform(4).sample(1000, np.random.default_rng(0))
        assert X.shape == (1000, 4)
        assert np.all(X[:, 0] == 1.0)
        assert np.all(np.abs(X[:, 1:]) <= 1.0)

    def test_discrete_example_marginals(self) -> None:
        """Empirical frequencies match the stated probabilities within binomial bands."""
        n = 100_000
        X = DiscreteExample(3).sample(n, np.random.default_rng(8))
        for value, prob in [(0.5, 0.8), (2.0, 0.2)]:
            freq = np.mean(X[:, 0] == value)
            assert abs(freq - prob) <= 4 * np.sqrt(prob * (1 - prob) / n)
        for value, prob in [(2.0, 0.125), (-2.0, 0.125), (0.0, 0.75)]:
            freq = np.mean(X[:, 1] == value)
            assert abs(freq - prob) <= 4 * np.sqrt(prob * (1 - prob) / n)

    def test_finite_support_product_measure(self) -> None:
        coins = FiniteSupport([[1, 1], [1, -1], [-1, 1], [-1, -1]], [0.25] * 4)
        assert coins.is_product_measure()
        correlated = FiniteSupport([[1, 1], [-1, -1]], [0.5, 0.5])
        assert not correlated.is_product_measure()

    def test_finite_support_validates_probabilities(self) -> None:
        with pytest.raises(ValueError):
            FiniteSupport([[1.0], [2.0]], [0.7, 0.7])
        with pytest.raises(DimensionMismatch):
            FiniteSupport([[1.0], [2.0]], [1.0])

    def test_constant_price_instance(self) -> None:
        theta = constant_price_theta(3, price=1.3)
        X = ConstantPlusUniform(3).sample(100, np.random.default_rng(0))
        prices, _ = optimal_prices(theta, X)
        np.testing.assert_allclose(prices, 1.3)


class TestEnvironment:
    """Test the per-trial environment."""

    @pytest.fixture
    def env(self) -> DemandEnvironment:
        return DemandEnvironment(
            theta=benchmark_theta(3),
            sampler=ConstantPlusUniform(3),
            noise=GaussianShock(0.0),
            bounds=PriceBounds(0.0, 2.0),
        )

    def test_noiseless_step_returns_mean(self, env: DemandEnvironment) -> None:
        interaction = env.step(0.8, np.random.default_rng(0))
        assert interaction.demand == pytest.approx(mean_demand(env.theta, interaction.x, 0.8))
        assert interaction.t == 1
        assert env.t == 1

    def test_step_accepts_a_price_rule(self, env: DemandEnvironment) -> None:
        interaction = env.step(lambda x: optimal_price(env.theta, x), np.random.default_rng(1))
        assert interaction.p == pytest.approx(optimal_price(env.theta, interaction.x))

    def test_step_is_deterministic(self, env: DemandEnvironment) -> None:
        noisy = DemandEnvironment(env.theta, env.sampler, GaussianShock(0.1), env.bounds)
        first = noisy.step(1.0, np.random.default_rng(42))
        noisy.reset()
        second = noisy.step(1.0, np.random.default_rng(42))
        assert np.array_equal(first.x, second.x)
        assert first.demand == second.demand

    def test_price_out_of_bounds(self, env: DemandEnvironment) -> None:
        with pytest.raises(PriceOutOfBounds):
            env.step(2.5, np.random.default_rng(0))

    def test_poisson_mean(self) -> None:
        """The sample mean of Poisson demand at a fixed (x, p) is within 3 standard errors."""
        theta = ModelParams(alpha=[3.0], beta=[-1.0])
        env = DemandEnvironment(theta, FiniteSupport([[1.0]], [1.0]), PoissonDemand(), PriceBounds(0.0, 2.0))
        n = 100_000
        X = np.ones((n, 1))
        demands = env.respond(X, np.full(n, 1.0), np.random.default_rng(9))
        assert abs(demands.mean() - 2.0) <= 3 * np.sqrt(2.0 / n)

    def test_poisson_clamps_negative_means(self) -> None:
        theta = ModelParams(alpha=[0.5], beta=[-1.0])
        env = DemandEnvironment(theta, FiniteSupport([[1.0]], [1.0]), PoissonDemand(), PriceBounds(0.0, 2.0))
        demands = env.respond(np.ones((4, 1)), np.array([0.0, 0.0, 2.0, 2.0]), np.random.default_rng(0))
        assert env.poisson_clamps == 2
        assert np.all(demands[2:] == 0.0)
        env.reset()
        assert env.poisson_clamps == 0

    def test_sampler_dimension_must_match(self) -> None:
        with pytest.raises(DimensionMismatch):
            DemandEnvironment(benchmark_theta(3), ConstantPlusUniform(4), GaussianShock(0.0), PriceBounds(0.0, 2.0))


class TestAssumptionReport:
    """Test the empirical instance check."""

    def test_benchmark_is_well_posed(self) -> None:
        report = assumption_report(
            benchmark_theta(4), ConstantPlusUniform(4), PriceBounds(0.0, 2.0), 5000, np.random.default_rng(0)
        )
        assert report.satisfied
        assert report.b1 >= 0.6 - 1e-12
        assert report.b2 <= 1.4 + 1e-12
        assert report.price_range[0] > 0.1 and report.price_range[1] < 1.9
