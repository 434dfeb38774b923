"""Probabilistic baselines: quantile intervals, closed-form KL against a
quadrature oracle, moment aggregation, and the three uncertainty sources."""

import math

import numpy as np
import pytest

from intervalnets.baselines import (
    VariationalPosterior,
    _aggregate_moments,
    bnn_predict,
    bnn_train,
    ensemble_predict,
    ensemble_train,
    gaussian_pi,
    gaussian_simulate,
    kl_diag_gaussian,
    mcdropout_predict,
    mcdropout_train,
    z_quantile,
)
from intervalnets.dataio import synthetic_plant, zscore_apply, zscore_fit
from intervalnets.grad import Tape, softplus_values
from intervalnets.nets import ModelSpec, init_crisp, param_shapes
from intervalnets.rollouts import gaussian_rollout, register_params
from intervalnets.training import TrainConfig, window_data


def gaussian_spec(kind="node", hidden=(4,)):
    return ModelSpec(kind=kind, hidden=hidden, n_x=1, n_d=0, n_y=1, alpha=0.9, out_width=2)


def plant_batch(k=160, window=10, n_step=4, noise=0.05):
    series = synthetic_plant(k, seed=0, noise_std=noise)
    stats = zscore_fit(series)
    norm = zscore_apply(series, stats)
    return window_data(norm.u, norm.y, window, n_step), norm


class TestGaussianPi:
    def test_two_sided_quantile_value(self):
        assert z_quantile(0.9) == pytest.approx(1.645, abs=1e-3)
        assert z_quantile(0.95) == pytest.approx(1.960, abs=1e-3)

    def test_zero_deviation_degenerates(self):
        lo, hi = gaussian_pi(2.0, 0.0, 0.9)
        assert lo == hi == 2.0

    def test_width_is_exactly_two_z_sigma(self):
        sigma = np.array([0.1, 1.0, 3.7])
        lo, hi = gaussian_pi(np.zeros(3), sigma, 0.9)
        z = z_quantile(0.9)
        np.testing.assert_array_equal(hi - lo, 2.0 * z * sigma)
        np.testing.assert_array_equal(hi, -lo)

    def test_higher_coverage_strictly_wider(self):
        lo90, hi90 = gaussian_pi(0.0, 1.0, 0.9)
        lo95, hi95 = gaussian_pi(0.0, 1.0, 0.95)
        assert lo95 < lo90 and hi90 < hi95

    def test_validates_inputs(self):
        with pytest.raises(ValueError):
            gaussian_pi(0.0, 1.0, 1.5)
        with pytest.raises(ValueError):
            gaussian_pi(0.0, -1.0, 0.9)


class TestKl:
    def test_zero_when_posterior_equals_prior(self):
        assert kl_diag_gaussian(np.zeros(5), np.full(5, 0.7), 0.7) == pytest.approx(0.0, abs=1e-14)

    def test_scalar_closed_form(self):
        # KL(N(1, 1) || N(0, 1)) = 0.5
        assert kl_diag_gaussian(np.array([1.0]), np.array([1.0]), 1.0) == pytest.approx(0.5)

    def test_matches_quadrature_oracle(self):
        from scipy.integrate import quad

        cases = [(0.3, 0.8, 1.0), (-1.2, 0.5, 2.0), (0.0, 1.5, 0.7)]
        for m, s, rho in cases:
            def integrand(x):
                q = math.exp(-0.5 * ((x - m) / s) ** 2) / (s * math.sqrt(2 * math.pi))
                log_q = -0.5 * ((x - m) / s) ** 2 - math.log(s * math.sqrt(2 * math.pi))
                log_p = -0.5 * (x / rho) ** 2 - math.log(rho * math.sqrt(2 * math.pi))
                return q * (log_q - log_p)

            oracle, _ = quad(integrand, m - 12 * s, m + 12 * s, limit=200)
            closed = kl_diag_gaussian(np.array([m]), np.array([s]), rho)
            assert closed == pytest.approx(oracle, abs=1e-10)

    def test_rejects_bad_prior(self):
        with pytest.raises(ValueError):
            kl_diag_gaussian(np.zeros(1), np.ones(1), 0.0)


class TestAggregation:
    def test_two_sample_hand_case(self):
        mu = np.array([[0.0], [2.0]])
        var = np.zeros((2, 1))
        mu_hat, var_hat = _aggregate_moments(mu, var)
        assert mu_hat[0] == 1.0
        assert var_hat[0] == 1.0  # population variance of {0, 2}

    def test_zero_spread_keeps_head_variance(self):
        mu = np.full((5, 3), 0.7)
        var = np.full((5, 3), 0.04)
        mu_hat, var_hat = _aggregate_moments(mu, var)
        np.testing.assert_allclose(var_hat, 0.04, atol=1e-15)

    def test_total_variance_decomposition(self):
        rng = np.random.default_rng(0)
        mu = rng.standard_normal((20, 7))
        var = np.abs(rng.standard_normal((20, 7)))
        _, var_hat = _aggregate_moments(mu, var)
        assert np.all(var_hat >= var.mean(axis=0) - 1e-12)


class TestGaussianSimulate:
    def test_matches_tape_rollout(self):
        spec = gaussian_spec(kind="lstm", hidden=(3,))
        theta = init_crisp(spec, seed=0)
        u = np.random.default_rng(1).uniform(-1, 1, 15)
        mu, var = gaussian_simulate(spec, theta, u, y1=0.3)
        tape = Tape()
        nodes = register_params(tape, theta, trainable=False)
        mus, vs = gaussian_rollout(tape, spec, nodes, u[None, :], y_init=np.array([0.3]))
        np.testing.assert_allclose(mu, [m.value[0, 0] for m in mus], atol=1e-10)
        np.testing.assert_allclose(var, [v.value[0, 0] for v in vs], atol=1e-10)

    def test_node_kind_accumulates_mean_channel_only(self):
        spec = gaussian_spec(kind="node")
        theta = {k: np.zeros(s) for k, s in param_shapes(spec).items()}
        theta["out.b"] = np.array([[0.5], [0.0]])
        mu, var = gaussian_simulate(spec, theta, np.zeros(4), y1=1.0)
        np.testing.assert_allclose(mu, [1.5, 2.0, 2.5, 3.0])
        np.testing.assert_allclose(var, softplus_values(np.zeros(4)))

    def test_requires_two_channel_head(self):
        spec = ModelSpec(kind="node", hidden=(3,), n_x=1, n_d=0, n_y=1)
        with pytest.raises(ValueError):
            gaussian_simulate(spec, init_crisp(spec, 0), np.zeros(3))


class TestBnn:
    def test_posterior_sampling_uses_softplus_std(self):
        post = VariationalPosterior(
            {"w": np.zeros((2, 2))}, {"w": np.full((2, 2), -40.0)}
        )
        rng = np.random.default_rng(0)
        sampled = post.sample(rng)
        np.testing.assert_allclose(sampled["w"], 0.0, atol=1e-15)

    def test_training_produces_finite_decreasing_elbo(self):
        batch, _ = plant_batch()
        spec = gaussian_spec()
        cfg = TrainConfig(epochs=6, mbs=8, lr=5e-3, seed=0)
        posterior, record = bnn_train(batch, spec, cfg, prior_rho=1.0)
        losses = [e["loss_elbo"] for e in record.epochs]
        assert all(math.isfinite(v) for v in losses)
        assert losses[-1] < losses[0]

    def test_predict_aggregates_over_posterior_samples(self):
        spec = gaussian_spec()
        theta = init_crisp(spec, seed=1)
        post = VariationalPosterior(
            {k: v.copy() for k, v in theta.items()},
            {k: np.full_like(v, -40.0) for k, v in theta.items()},  # ~zero spread
        )
        u = np.random.default_rng(2).uniform(-1, 1, 12)
        series = bnn_predict(post, spec, u, y1=0.0, samples=8, alpha=0.9, seed=0)
        mu, var = gaussian_simulate(spec, theta, u, y1=0.0)
        np.testing.assert_allclose(series.y, mu, atol=1e-8)
        lo, hi = gaussian_pi(mu, np.sqrt(var), 0.9)
        np.testing.assert_allclose(series.lo, lo, atol=1e-7)

    def test_predict_needs_two_samples(self):
        spec = gaussian_spec()
        post = VariationalPosterior({"w": np.zeros(1)}, {"w": np.zeros(1)})
        with pytest.raises(ValueError):
            bnn_predict(post, spec, np.zeros(3), 0.0, samples=1, alpha=0.9)

    def test_prior_scale_validated(self):
        batch, _ = plant_batch()
        with pytest.raises(ValueError):
            bnn_train(batch, gaussian_spec(), TrainConfig(epochs=1), prior_rho=0.0)


class TestMcDropout:
    def test_rate_zero_is_deterministic_with_head_variance(self):
        spec = gaussian_spec()
        theta = init_crisp(spec, seed=3)
        u = np.random.default_rng(3).uniform(-1, 1, 10)
        series = mcdropout_predict(theta, spec, u, y1=0.0, rate=0.0, samples=5, alpha=0.9)
        mu, var = gaussian_simulate(spec, theta, u, y1=0.0)
        np.testing.assert_allclose(series.y, mu, atol=1e-10)
        lo, hi = gaussian_pi(mu, np.sqrt(var), 0.9)
        np.testing.assert_allclose(series.hi, hi, atol=1e-9)

    def test_inverted_mask_mean_is_one(self):
        from intervalnets.seeding import substream

        rng = substream(0, "dropout")
        keep = 0.95
        masks = rng.binomial(1, keep, size=200_000) / keep
        assert masks.mean() == pytest.approx(1.0, abs=5e-3)

    def test_stochastic_passes_differ(self):
        spec = gaussian_spec()
        theta = init_crisp(spec, seed=4)
        u = np.random.default_rng(4).uniform(-1, 1, 8)
        tape_series = mcdropout_predict(theta, spec, u, y1=0.0, rate=0.3, samples=100, alpha=0.9, seed=1)
        # wide dropout at a high rate must produce genuine spread
        assert np.all(tape_series.hi - tape_series.lo > 0.0)

    def test_training_validates_rate(self):
        batch, _ = plant_batch()
        with pytest.raises(ValueError):
            mcdropout_train(batch, gaussian_spec(), TrainConfig(epochs=1), rate=1.0)

    def test_training_runs_with_dropout(self):
        batch, _ = plant_batch()
        cfg = TrainConfig(epochs=3, mbs=8, seed=5)
        theta, record = mcdropout_train(batch, gaussian_spec(), cfg, rate=0.05)
        assert len(record.epochs) == 3
        assert all(math.isfinite(e["loss_nll"]) for e in record.epochs)


class TestEnsemble:
    def test_identical_members_keep_head_variance(self):
        spec = gaussian_spec()
        theta = init_crisp(spec, seed=6)
        u = np.random.default_rng(6).uniform(-1, 1, 10)
        series = ensemble_predict([theta, theta, theta], spec, u, y1=0.0, alpha=0.9)
        mu, var = gaussian_simulate(spec, theta, u, y1=0.0)
        np.testing.assert_allclose(series.y, mu, atol=1e-12)
        lo, hi = gaussian_pi(mu, np.sqrt(var), 0.9)
        np.testing.assert_allclose(series.lo, lo, atol=1e-10)

    def test_member_spread_adds_population_variance(self):
        mu = np.array([[0.0], [2.0]])
        var = np.zeros((2, 1))
        _, var_hat = _aggregate_moments(mu, var)
        assert var_hat[0] == 1.0

    def test_members_differ_after_training(self):
        batch, _ = plant_batch()
        cfg = TrainConfig(epochs=2, mbs=8, seed=7)
        members, records = ensemble_train(batch, gaussian_spec(), cfg, members=3)
        assert len(members) == 3 and len(records) == 3
        assert not np.allclose(members[0]["out.W"], members[1]["out.W"])

    def test_rejects_singleton(self):
        batch, _ = plant_batch()
        with pytest.raises(ValueError):
            ensemble_train(batch, gaussian_spec(), TrainConfig(epochs=1), members=1)
        with pytest.raises(ValueError):
            ensemble_predict([init_crisp(gaussian_spec(), 0)], gaussian_spec(), np.zeros(3), 0.0, 0.9)
