import numpy as np
import pytest

from spectral_nsr.errors import (
    BadParams,
    EmptyLabels,
    NonFiniteGradient,
    ShapeMismatch,
)
from spectral_nsr.graph import combinatorial_laplacian
from spectral_nsr.harness import gen_dataset, split_dataset
from spectral_nsr.pipeline import (
    REFERENCE_LAMBDA_MAX,
    Pipeline,
    PipelineConfig,
    init_params,
    initial_filter_response,
)
from spectral_nsr.rules import SpectralRule, builtin_template, rule_coefficients
from spectral_nsr.spectral import (
    ChebyshevFilter,
    chebyshev_stack,
    estimate_lambda_max,
    fit_chebyshev,
    sample_response,
)
from spectral_nsr.symbolic import PredicateSet
from spectral_nsr.trainer import (
    AdamState,
    TaskContext,
    TrainRun,
    adam_step,
    grad_gate,
    grad_rule_weights,
    grad_theta,
    grad_threshold,
    init_adam,
    loss,
    task_loss_and_grads,
    train,
)

from conftest import random_graph

FD_STEP = 1e-5


def make_instance(rng, n=12, order=4, bands=1, n_rules=2, vector_tau=False):
    """Random task context plus randomized parameters for gradient checks."""
    g = random_graph(rng, n, density=0.3)
    lap = combinatorial_laplacian(g)
    lam_max = max(estimate_lambda_max(lap), 1e-9)
    rules = tuple(
        SpectralRule(f"r{i}", builtin_template("heat-kernel", lam_max, t=0.3 + 0.4 * i), weight=1.0)
        for i in range(n_rules)
    )
    rows = rule_coefficients(rules, lam_max, order) if rules else None
    x0 = rng.uniform(0.0, 1.0, size=n)
    stack = chebyshev_stack(lap, lam_max, x0, order)
    labeled = rng.permutation(n)[: max(n // 2, 2)]
    label_nodes = np.sort(labeled)
    label_values = rng.integers(0, 2, size=label_nodes.size).astype(float)
    ctx = TaskContext(lam_max, lap, rows, x0, stack, label_nodes, label_values)
    params = {
        "theta": rng.standard_normal((bands, order + 1)) * 0.5,
        "rule_weights": rng.uniform(0.2, 1.0, size=n_rules),
        "q": rng.standard_normal(8),
        "s": rng.standard_normal((bands, 8)),
        "tau": rng.uniform(0.1, 0.4, size=n) if vector_tau else np.asarray([rng.uniform(0.1, 0.4)]),
        "alpha": np.asarray(rng.uniform(2.0, 6.0)),
    }
    return ctx, params, order


def fd_gradient(ctx, params, order, key):
    base = {k: np.array(v) for k, v in params.items()}
    flat = base[key].reshape(-1)
    grad = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + FD_STEP
        up, _ = task_loss_and_grads(ctx, base, order)
        flat[i] = orig - FD_STEP
        down, _ = task_loss_and_grads(ctx, base, order)
        flat[i] = orig
        grad[i] = (up - down) / (2 * FD_STEP)
    return grad.reshape(base[key].shape)


def check_gradients(ctx, params, order, keys, rel_tol=1e-5):
    _, analytic = task_loss_and_grads(ctx, params, order)
    for key in keys:
        fd = fd_gradient(ctx, params, order, key)
        ga = np.asarray(analytic[key], dtype=np.float64)
        scale = max(np.linalg.norm(ga), np.linalg.norm(fd))
        if scale < 1e-12:
            continue
        rel = np.linalg.norm(ga - fd) / scale
        assert rel <= rel_tol, f"{key}: relative error {rel}"


class TestLoss:
    def test_half_everywhere_is_ln2(self):
        p = PredicateSet(np.full(10, 0.5), soft=True)
        labels = {i: i % 2 for i in range(10)}
        assert loss(p, labels) == pytest.approx(np.log(2.0), abs=1e-12)

    def test_perfect_prediction_is_clip_scale(self):
        p = PredicateSet(np.array([1.0, 0.0, 1.0]), soft=True)
        labels = {0: 1, 1: 0, 2: 1}
        assert loss(p, labels) == pytest.approx(1e-7, rel=1e-3)

    def test_matches_scalar_loop(self, rng):
        values = rng.uniform(0.0, 1.0, size=20)
        labels = {i: int(rng.integers(0, 2)) for i in range(20)}
        p = PredicateSet(values, soft=True)
        acc = 0.0
        for i in range(20):
            q = min(max(values[i], 1e-7), 1 - 1e-7)
            acc += -(labels[i] * np.log(q) + (1 - labels[i]) * np.log(1 - q))
        assert loss(p, labels) == pytest.approx(acc / 20, abs=1e-12)

    def test_empty_labels(self):
        with pytest.raises(EmptyLabels):
            loss(PredicateSet(np.array([0.5]), soft=True), {})


class TestGradTheta:
    def test_zero_upstream(self, rng):
        stack = rng.standard_normal((10, 5))
        assert np.array_equal(grad_theta(stack, np.zeros(10)), np.zeros(5))

    def test_order_zero_is_inner_product(self, rng):
        x = rng.standard_normal(8)
        upstream = rng.standard_normal(8)
        g = grad_theta(x[:, None], upstream)
        assert g.shape == (1,)
        assert g[0] == pytest.approx(float(upstream @ x), abs=1e-12)

    def test_shape_mismatch(self, rng):
        with pytest.raises(ShapeMismatch):
            grad_theta(rng.standard_normal((5, 3)), rng.standard_normal(4))

    def test_finite_differences(self, rng):
        ctx, params, order = make_instance(rng)
        check_gradients(ctx, params, order, ["theta"])


class TestGradRuleWeights:
    def test_finite_differences(self, rng):
        ctx, params, order = make_instance(rng, n_rules=3)
        check_gradients(ctx, params, order, ["rule_weights"])

    def test_shape_mismatch(self, rng):
        with pytest.raises(ShapeMismatch):
            grad_rule_weights(rng.standard_normal((2, 4)), rng.standard_normal((6, 5)), rng.standard_normal(6))


class TestGradGate:
    def test_single_band_zero_gate_gradient(self, rng):
        ctx, params, order = make_instance(rng, bands=1)
        _, grads = task_loss_and_grads(ctx, params, order)
        assert np.array_equal(grads["q"], np.zeros(8))
        assert np.array_equal(grads["s"], np.zeros((1, 8)))

    def test_equal_band_filters_kill_query_gradient(self, rng):
        theta_row = rng.standard_normal(5)
        theta = np.stack([theta_row, theta_row])
        q = rng.standard_normal(8)
        s = rng.standard_normal((2, 8))
        d_theta, d_q, d_s = grad_gate(theta, q, s, rng.standard_normal(5))
        assert np.abs(d_q).max() <= 1e-15
        assert np.abs(d_s).max() <= 1e-15

    def test_finite_differences(self, rng):
        ctx, params, order = make_instance(rng, bands=3)
        check_gradients(ctx, params, order, ["theta", "q", "s"])


class TestGradThreshold:
    def test_finite_differences_scalar_tau(self, rng):
        ctx, params, order = make_instance(rng)
        check_gradients(ctx, params, order, ["tau", "alpha"])

    def test_finite_differences_vector_tau(self, rng):
        ctx, params, order = make_instance(rng, vector_tau=True)
        check_gradients(ctx, params, order, ["tau", "alpha"])

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            grad_threshold(np.zeros(3), np.zeros(2), 1.0, np.zeros(3), np.zeros(3))


class TestGradientSuiteKeystone:
    def test_all_gradients_many_instances(self, rng):
        # the module's keystone property: analytic == finite differences
        for trial in range(8):
            bands = 1 if trial % 2 == 0 else 2
            n_rules = (0, 2, 3)[trial % 3]
            ctx, params, order = make_instance(
                rng,
                n=int(rng.integers(8, 18)),
                order=int(rng.integers(2, 6)),
                bands=bands,
                n_rules=n_rules,
                vector_tau=bool(trial % 2),
            )
            keys = ["theta", "tau", "alpha"]
            if n_rules:
                keys.append("rule_weights")
            if bands > 1:
                keys += ["q", "s"]
            check_gradients(ctx, params, order, keys)


class TestAdam:
    def test_zero_gradient_keeps_params(self):
        params = {"theta": np.array([[1.0, 2.0]])}
        state = init_adam(params)
        out = adam_step(params, {"theta": np.zeros((1, 2))}, state)
        assert np.array_equal(out["theta"], params["theta"])
        assert state.step == 1

    def test_constant_gradient_update_magnitude_approaches_lr(self):
        params = {"theta": np.array([0.0])}
        state = init_adam(params, {"spectral": 1e-3, "embedding": 1e-5})
        g = {"theta": np.array([0.37])}
        prev = params
        for _ in range(10):
            new = adam_step(prev, g, state)
            step_size = abs(new["theta"][0] - prev["theta"][0])
            prev = new
        assert step_size == pytest.approx(1e-3, rel=1e-6)

    def test_three_steps_match_manual_arithmetic(self):
        lr, b1, b2, eps = 0.1, 0.9, 0.999, 1e-8
        x = 0.5
        gs = [0.2, -0.05, 0.11]
        m = v = 0.0
        expected = []
        for t, g in enumerate(gs, start=1):
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            m_hat = m / (1 - b1**t)
            v_hat = v / (1 - b2**t)
            x = x - lr * m_hat / (np.sqrt(v_hat) + eps)
            expected.append(x)

        params = {"theta": np.array([0.5])}
        state = init_adam(params, {"spectral": lr, "embedding": lr})
        for g, want in zip(gs, expected):
            params = adam_step(params, {"theta": np.array([g])}, state)
            assert params["theta"][0] == pytest.approx(want, abs=1e-12)

    def test_rule_weights_clamped_non_negative(self):
        params = {"rule_weights": np.array([1e-6])}
        state = init_adam(params, {"spectral": 0.5, "embedding": 0.5})
        out = adam_step(params, {"rule_weights": np.array([1.0])}, state)
        assert out["rule_weights"][0] == 0.0

    def test_non_finite_gradient(self):
        params = {"theta": np.array([1.0])}
        state = init_adam(params)
        with pytest.raises(NonFiniteGradient, match="theta"):
            adam_step(params, {"theta": np.array([np.nan])}, state)
        assert state.step == 0

    def test_unknown_gradient_key(self):
        params = {"theta": np.array([1.0])}
        state = init_adam(params)
        with pytest.raises(ShapeMismatch):
            adam_step(params, {"bogus": np.array([1.0])}, state)


def reference_rules():
    return [
        SpectralRule("transitive", builtin_template("low-pass", REFERENCE_LAMBDA_MAX, beta=1.0), kind="low-pass"),
        SpectralRule("conflict", builtin_template("high-pass", REFERENCE_LAMBDA_MAX), kind="high-pass"),
    ]


def small_splits(n=80, seed=0):
    tasks = gen_dataset("transitive", n, seed=seed)
    return split_dataset(tasks, (n - 20, 10, 10))


class TestTrainLoop:
    def test_perfect_initial_filter_early_stops_at_epoch_one(self):
        # without the rule bank the initial response already separates
        # seeds from noise at tau=0.4, so epoch 1 validates at 1.0
        cfg = PipelineConfig(tau=0.4)
        splits = small_splits()
        run = TrainRun(max_epochs=20, batch_size=16, patience=3, seed=0, latency_probe=0)
        result = train(cfg, splits, run)
        assert result.history[0].val_accuracy == 1.0
        assert result.checkpoint.metadata["epoch"] == 1
        assert result.stopped_epoch == 1 + run.patience

    def test_zero_learning_rate_freezes_params(self):
        cfg = PipelineConfig(tau=0.4)
        splits = small_splits()
        run = TrainRun(
            max_epochs=3,
            batch_size=16,
            patience=3,
            seed=0,
            learning_rates={"spectral": 0.0, "embedding": 0.0},
            latency_probe=0,
        )
        result = train(cfg, splits, run, rules=reference_rules())
        first, last = result.trajectory[0], result.trajectory[-1]
        for key in first:
            assert np.array_equal(first[key], last[key]), key

    def test_seed0_validation_curve_regression(self):
        # frozen from the reference run: strictly improving first five epochs
        frozen = [0.677277716794731, 0.6871569703622393, 0.6937431394072447,
                  0.7113062568605928, 0.7530186608122942]
        tasks = gen_dataset("transitive", 1000, seed=0)
        splits = split_dataset(tasks, (800, 100, 100))
        cfg = PipelineConfig(tau=0.40, rules="tests/data/reference_rules.txt")
        run = TrainRun(max_epochs=5, batch_size=32, patience=5, seed=0, latency_probe=0)
        result = train(cfg, splits, run, rules=reference_rules())
        curve = [h.val_accuracy for h in result.history]
        assert all(a < b for a, b in zip(curve, curve[1:]))
        assert np.allclose(curve, frozen, atol=0.02)

    def test_fixed_seed_trajectories_bit_identical(self):
        cfg = PipelineConfig(tau=0.4)
        run = TrainRun(max_epochs=3, batch_size=16, patience=3, seed=7, latency_probe=0)
        results = [train(cfg, small_splits(), run, rules=reference_rules()) for _ in range(2)]
        for snap_a, snap_b in zip(results[0].trajectory, results[1].trajectory):
            for key in snap_a:
                assert np.array_equal(snap_a[key], snap_b[key]), key

    def test_checkpoint_round_trip_reproduces_val_accuracy(self, tmp_path):
        from spectral_nsr.harness import evaluate
        from spectral_nsr.trainer import Checkpoint

        cfg = PipelineConfig(tau=0.4)
        splits = small_splits()
        run = TrainRun(max_epochs=2, batch_size=16, patience=3, seed=0, latency_probe=0)
        rules = reference_rules()
        result = train(cfg, splits, run, rules=rules)
        path = tmp_path / "ckpt.json"
        result.checkpoint.save(path)
        loaded = Checkpoint.load(path)
        for key, value in result.checkpoint.params.items():
            assert np.array_equal(loaded.params[key], value)
        acc = evaluate(loaded.pipeline(rules=rules), splits.val, measure_latency=False).accuracy
        assert acc == result.checkpoint.metadata["val_accuracy"]

    def test_diverged_loss_raises(self):
        from spectral_nsr.errors import DivergedLoss

        cfg = PipelineConfig(tau=0.4)
        splits = small_splits(40)
        run = TrainRun(max_epochs=1, batch_size=8, seed=0, latency_probe=0)
        poisoned = Pipeline(cfg).params
        poisoned["theta"] = np.full_like(poisoned["theta"], np.nan)
        with pytest.raises(DivergedLoss):
            train(cfg, splits, run, warm_start=poisoned)

    def test_run_validation(self):
        with pytest.raises(BadParams):
            TrainRun(max_epochs=0)
        with pytest.raises(BadParams):
            TrainRun(max_epochs=51)
        with pytest.raises(BadParams):
            TrainRun(patience=0)


class TestLowPassInit:
    def test_initial_response_non_increasing(self):
        theta = fit_chebyshev(initial_filter_response(), 5, REFERENCE_LAMBDA_MAX)
        grid = np.linspace(0.0, REFERENCE_LAMBDA_MAX, 64)
        values = sample_response(theta, grid)
        assert np.all(np.diff(values) <= 1e-12)

    def test_init_params_shapes(self):
        cfg = PipelineConfig(order=5, bands=3)
        params = init_params(cfg, n_rules=2)
        assert params["theta"].shape == (3, 6)
        assert params["rule_weights"].tolist() == [0.5, 0.5]
        assert params["s"].shape == (3, 8)
        assert params["tau"].shape == (1,)
