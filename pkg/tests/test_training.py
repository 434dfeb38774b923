"""Training machinery: windowing against the loop oracle, Adam closed
forms, strategy contracts (frozen parameters, snapshot selection, scale
normalization), and the joint/crisp ablation equivalence."""

import math

import numpy as np
import pytest

from intervalnets.errors import DataError, NumericError
from intervalnets.grad import Tape
from intervalnets.nets import ModelSpec, flatten_params, init_crisp, init_uncertainty, materialize
from intervalnets.objectives import build_mse
from intervalnets.rollouts import (
    interval_param_nodes,
    interval_rollout,
    register_params,
    stack_steps,
)
from intervalnets.training import (
    AdamState,
    TrainConfig,
    adam_step,
    gradnorm_update,
    shared_param_names,
    train_cascade,
    train_crisp,
    train_joint,
    window_data,
)


def windows_oracle(u, window, n_step):
    """Direct transcription of the extraction loop (1-based indices)."""
    rows = []
    k = 1
    while k <= len(u) - window:
        rows.append(u[k - 1 : k - 1 + window])
        k += n_step
    return np.stack(rows)


class TestWindowing:
    def test_small_case_enumeration(self):
        u = np.arange(10.0)
        batch = window_data(u, -u, window=4, n_step=3)
        assert batch.count == 2
        np.testing.assert_array_equal(batch.starts, [1, 4])
        np.testing.assert_array_equal(batch.u, [[0, 1, 2, 3], [3, 4, 5, 6]])
        np.testing.assert_array_equal(batch.y, -batch.u)

    def test_single_window(self):
        u = np.arange(8.0)
        batch = window_data(u, u, window=7, n_step=1)
        assert batch.count == 1

    def test_count_formula(self):
        for k, n, step in [(1000, 30, 2), (97, 13, 5), (50, 10, 7)]:
            u = np.arange(float(k))
            batch = window_data(u, u, n, step)
            assert batch.count == (k - n - 1) // step + 1
            np.testing.assert_array_equal(batch.u, windows_oracle(u, n, step))

    def test_benchmark_row_window_count(self):
        # 1000 samples, length-30 windows, stride 2: starts 1, 3, ..., 969
        u = np.arange(1000.0)
        batch = window_data(u, u, 30, 2)
        assert batch.count == 485
        assert batch.starts[-1] == 969

    def test_too_short_series_rejected(self):
        with pytest.raises(DataError):
            window_data(np.arange(5.0), np.arange(5.0), window=5, n_step=1)

    def test_oracle_sweep_sample(self):
        rng = np.random.default_rng(0)
        for _ in range(60):
            k = int(rng.integers(3, 200))
            n = int(rng.integers(1, min(50, k - 1) + 1))
            step = int(rng.integers(1, 11))
            u = rng.standard_normal(k)
            batch = window_data(u, u, n, step)
            np.testing.assert_array_equal(batch.u, windows_oracle(u, n, step))


class TestAdam:
    def test_zero_gradient_no_move(self):
        state = AdamState()
        params = {"w": np.array([1.0, -2.0])}
        out = adam_step(state, params, {"w": np.zeros(2)})
        np.testing.assert_array_equal(out["w"], params["w"])

    def test_first_step_closed_form(self):
        # with fresh moments the bias-corrected update is g / (|g| + eps)
        state = AdamState(lr=0.01, eps=1e-8)
        g = np.array([0.3, -4.0])
        out = adam_step(state, {"w": np.zeros(2)}, {"w": g})
        expected = -0.01 * g / (np.abs(g) + 1e-8)
        np.testing.assert_allclose(out["w"], expected, rtol=1e-12)

    def test_constant_gradient_step_approaches_lr_sign(self):
        state = AdamState(lr=1e-3)
        params = {"w": np.array([0.0])}
        g = {"w": np.array([0.37])}
        for _ in range(5000):
            params = adam_step(state, params, g)
        before = params["w"][0]
        params = adam_step(state, params, g)
        assert params["w"][0] - before == pytest.approx(-1e-3, rel=1e-6)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            adam_step(AdamState(), {"w": np.zeros(2)}, {"w": np.zeros(3)})


def tiny_batch(seed=0, k=120, window=8, n_step=3):
    from intervalnets.dataio import synthetic_plant, zscore_apply, zscore_fit

    series = synthetic_plant(k, seed=seed, noise_std=0.0)
    stats = zscore_fit(series)
    norm = zscore_apply(series, stats)
    return window_data(norm.u, norm.y, window, n_step)


def tiny_spec(kind="node", trick="abs"):
    return ModelSpec(kind=kind, hidden=(4,), n_x=1, n_d=0, n_y=1, trick=trick, alpha=0.9)


class TestCrispTraining:
    def test_noiseless_linear_plant_reaches_low_loss(self):
        batch = tiny_batch(k=400, window=12, n_step=2)
        spec = tiny_spec()
        cfg = TrainConfig(epochs=80, mbs=16, lr=5e-3, seed=0)
        theta, record = train_crisp(batch, spec, cfg)
        assert min(e["loss_mse"] for e in record.epochs) < 1e-3

    def test_zero_epochs_returns_initialization(self):
        batch = tiny_batch()
        spec = tiny_spec()
        cfg = TrainConfig(epochs=0, seed=3)
        theta, record = train_crisp(batch, spec, cfg)
        init = init_crisp(spec, 3)
        for k in theta:
            np.testing.assert_array_equal(theta[k], init[k])
        assert record.epochs == []

    def test_losses_recorded_and_finite(self):
        batch = tiny_batch()
        cfg = TrainConfig(epochs=3, mbs=8, seed=1)
        _, record = train_crisp(batch, tiny_spec(), cfg)
        assert len(record.epochs) == 3
        assert all(math.isfinite(e["loss_mse"]) for e in record.epochs)

    def test_best_snapshot_matches_recorded_minimum(self):
        batch = tiny_batch()
        cfg = TrainConfig(epochs=5, mbs=8, seed=2)
        _, record = train_crisp(batch, tiny_spec(), cfg)
        losses = [e["loss_mse"] for e in record.epochs]
        assert record.best_theta_epoch == int(np.argmin(losses)) + 1


class TestCascade:
    def test_crisp_parameters_frozen_in_stage_two(self):
        batch = tiny_batch()
        cfg = TrainConfig(epochs=4, mbs=8, seed=4, r_h=0.5, r_o=0.5)
        result = train_cascade(batch, tiny_spec(), cfg)
        theta_direct, _ = train_crisp(batch, tiny_spec(), cfg)
        assert np.array_equal(flatten_params(result.theta), flatten_params(theta_direct))

    def test_stage_two_loss_nonnegative_without_width_penalty(self):
        batch = tiny_batch()
        cfg = TrainConfig(epochs=4, mbs=8, seed=5, lam=0.0)
        result = train_cascade(batch, tiny_spec(), cfg)
        assert all(e["loss_rqr_w"] >= 0.0 for e in result.stage2.epochs)

    def test_margins_initialized_from_trained_parameters(self):
        batch = tiny_batch()
        cfg = TrainConfig(epochs=2, mbs=8, seed=6, r_h=0.3, r_o=0.7)
        result = train_cascade(batch, tiny_spec(), cfg)
        # raw margins moved off their |theta|*r start, but keep theta frozen
        init_delta = init_uncertainty(result.theta, 0.3, 0.7, "abs")
        moved = any(
            not np.allclose(result.delta.lower[k], init_delta.lower[k])
            for k in result.delta.lower
        )
        assert moved


class TestGradNorm:
    def test_symmetric_case_is_exactly_zero(self):
        grads, l_grad = gradnorm_update(
            losses_now=(0.5, 0.5),
            losses_init=(0.5, 0.5),
            raw_norms=(2.0, 2.0),
            scales=np.array([0.5, 0.5]),
            beta=1.0,
        )
        assert l_grad == 0.0

    def test_beta_zero_targets_mean_norm(self):
        grads, l_grad = gradnorm_update(
            losses_now=(0.9, 0.1),
            losses_init=(1.0, 1.0),
            raw_norms=(3.0, 1.0),
            scales=np.array([0.5, 0.5]),
            beta=0.0,
        )
        # targets are both mean(G) = (1.5 + 0.5) / 2 = 1.0
        assert l_grad == pytest.approx(abs(1.5 - 1.0) + abs(0.5 - 1.0))
        np.testing.assert_allclose(grads, [np.sign(0.5) * 3.0, np.sign(-0.5) * 1.0])

    def test_two_task_closed_form(self):
        s = np.array([0.6, 0.4])
        norms = (2.0, 5.0)
        l_now, l_init = (0.8, 0.2), (1.0, 0.5)
        ratios = np.array([0.8, 0.4])
        r = ratios / ratios.mean()
        g = s * np.asarray(norms)
        targets = g.mean() * r**1.5
        expected_l = np.abs(g - targets).sum()
        expected_grads = np.sign(g - targets) * np.asarray(norms)
        grads, l_grad = gradnorm_update(l_now, l_init, norms, s, beta=1.5)
        assert l_grad == pytest.approx(expected_l, rel=1e-12)
        np.testing.assert_allclose(grads, expected_grads)

    def test_zero_initial_loss_guarded(self):
        with pytest.raises(NumericError):
            gradnorm_update((0.5, 0.5), (0.0, 0.5), (1.0, 1.0), np.array([0.5, 0.5]), 1.0)


class TestJoint:
    def test_scales_sum_to_one_every_iteration(self):
        batch = tiny_batch()
        cfg = TrainConfig(epochs=6, mbs=8, seed=7, r_h=0.2, r_o=0.2)
        result = train_joint(batch, tiny_spec(), cfg)
        assert result.record.scales  # recorded per iteration
        for s1, s2 in result.record.scales:
            assert abs(s1 + s2 - 1.0) <= 1e-12
            assert s1 > 0 and s2 > 0

    def test_ablation_reduces_to_crisp_training(self):
        batch = tiny_batch()
        spec = tiny_spec()
        cfg = TrainConfig(epochs=4, mbs=8, seed=8, r_h=0.2, r_o=0.2)
        crisp_theta, crisp_record = train_crisp(batch, spec, cfg)
        joint = train_joint(batch, spec, cfg, scales_frozen=(1.0, 0.0), update_delta=False)
        crisp_losses = [e["loss_mse"] for e in crisp_record.epochs]
        joint_losses = [e["loss_mse"] for e in joint.record.epochs]
        np.testing.assert_array_equal(crisp_losses, joint_losses)
        # snapshots must then coincide bit for bit
        assert np.array_equal(flatten_params(crisp_theta), flatten_params(joint.theta))

    def test_margin_gradients_from_regression_loss_are_zero(self):
        batch = tiny_batch()
        spec = tiny_spec()
        theta = init_crisp(spec, 9)
        delta = init_uncertainty(theta, 0.5, 0.5, spec.trick)
        tape = Tape()
        theta_nodes = register_params(tape, theta, trainable=True)
        lo_nodes = register_params(tape, delta.lower, trainable=True, prefix="dlo.")
        hi_nodes = register_params(tape, delta.upper, trainable=True, prefix="dhi.")
        ivp = interval_param_nodes(tape, theta_nodes, lo_nodes, hi_nodes, spec.trick)
        preds, _, _ = interval_rollout(tape, spec, theta_nodes, ivp, batch.u[:4], batch.y[:4, 0])
        grads = tape.backward(build_mse(tape, stack_steps(tape, preds), batch.y[:4].T))
        for name, g in grads.items():
            if name.startswith(("dlo.", "dhi.")):
                assert np.all(g == 0.0), name

    def test_containment_holds_after_every_update(self):
        batch = tiny_batch()
        spec = tiny_spec(trick="relu")
        cfg = TrainConfig(epochs=3, mbs=8, seed=10, r_h=0.4, r_o=0.4)
        result = train_joint(batch, spec, cfg)
        iv = materialize(result.theta, result.delta, spec.trick)
        for name, m in iv.items():
            assert np.all(m.lo <= result.theta[name])
            assert np.all(result.theta[name] <= m.hi)

    def test_best_snapshots_match_recorded_minima(self):
        batch = tiny_batch()
        cfg = TrainConfig(epochs=6, mbs=8, seed=11, r_h=0.2, r_o=0.2)
        result = train_joint(batch, tiny_spec(), cfg)
        pareto = [e["loss_pareto"] for e in result.record.epochs]
        rqr = [e["loss_rqr_w"] for e in result.record.epochs]
        assert result.record.best_theta_epoch == int(np.argmin(pareto)) + 1
        assert result.record.best_delta_epoch == int(np.argmin(rqr)) + 1


def test_shared_params_are_penultimate_layer_weights():
    assert shared_param_names(ModelSpec(kind="node", hidden=(4, 3), n_x=1, n_d=0, n_y=1)) == ["h1.W"]
    lstm = shared_param_names(ModelSpec(kind="lstm", hidden=(4, 3), n_x=1, n_d=0, n_y=1))
    assert "l1.Wi" in lstm and "l1.Uc" in lstm and len(lstm) == 8
    assert "l1.bi" not in lstm
