import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import central_difference
from repdim.data import LabeledDataset, PointCloud
from repdim.errors import DataFormatError, TrainingError, UsageError
from repdim.nn import (
    DenseLayer,
    MlpModel,
    TrainConfig,
    build_mlp,
    extract_activations,
    forward,
    gradients,
    load_model,
    model_from_dict,
    model_to_dict,
    mse_loss,
    save_model,
    sgd_step,
    train,
)


def dataset(X, Y):
    return LabeledDataset(PointCloud(np.asarray(X, float)), np.asarray(Y, float))


def toy_separable(n=80, seed=0):
    # two clusters around the coordinate axes
    rng = np.random.default_rng(seed)
    lab = rng.integers(0, 2, n)
    X = np.eye(2)[lab] * 2.0 + 0.1 * rng.standard_normal((n, 2))
    return dataset(X, np.eye(2)[lab])


class TestForward:
    def test_relu_identity(self):
        m = MlpModel([DenseLayer(np.eye(2), "relu"), DenseLayer(np.eye(2), "linear")])
        out, acts = forward(m, [1.0, -1.0])
        np.testing.assert_array_equal(acts[0], [1.0, 0.0])
        assert out is acts[-1]

    def test_linear_is_matrix_product(self):
        m = build_mlp([5, 7, 4, 3], activation="linear", seed=1)
        x = np.random.default_rng(0).standard_normal(5)
        W = m.layers[2].weight @ m.layers[1].weight @ m.layers[0].weight
        np.testing.assert_allclose(forward(m, x)[0], W @ x, atol=1e-12)

    def test_zero_input(self):
        m = build_mlp([4, 6, 2], seed=0)
        np.testing.assert_array_equal(forward(m, np.zeros(4))[0], 0.0)

    def test_shape_error(self):
        with pytest.raises(UsageError):
            forward(build_mlp([4, 2]), np.zeros(3))

    def test_bad_composition(self):
        with pytest.raises(UsageError):
            MlpModel([DenseLayer(np.ones((3, 2))), DenseLayer(np.ones((2, 4)))])
        with pytest.raises(UsageError):
            MlpModel([DenseLayer(np.array([[np.nan]]))])


class TestLoss:
    def test_perfect(self):
        m = MlpModel([DenseLayer(np.eye(2), "linear")])
        assert mse_loss(m, dataset(np.eye(2), np.eye(2))) == 0

    def test_single_sample(self):
        m = MlpModel([DenseLayer(np.zeros((2, 2)), "linear")])
        assert mse_loss(m, dataset([[1.0, 1.0]], [[1.0, 0.0]])) == 1.0

    def test_brute_recompute(self):
        m = build_mlp([3, 8, 2], seed=4)
        d = toy_separable(30)
        d = dataset(np.c_[d.inputs.points, np.ones(30)], d.targets)
        brute = sum(np.sum((forward(m, x)[0] - y) ** 2) for x, y in zip(d.inputs.points, d.targets))
        assert mse_loss(m, d) == pytest.approx(brute, rel=0, abs=1e-12)


class TestGradients:
    def test_hand_scalar(self):
        m = MlpModel([DenseLayer(np.zeros((1, 1)), "linear")])
        _, g = gradients(m, np.ones((1, 1)), np.ones((1, 1)))
        assert g[0][0][0, 0] == -2.0
        new = sgd_step(m, [[1.0]], [[1.0]], 0.5)
        assert new.layers[0].weight[0, 0] == 1.0
        assert m.layers[0].weight[0, 0] == 0.0

    @pytest.mark.parametrize("seed", range(20))
    def test_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        widths = [int(w) for w in rng.integers(2, 7, size=int(rng.integers(2, 5)))]
        m = build_mlp(widths, bias=bool(seed % 2), seed=seed)
        if m.layers[0].bias is not None:
            for l in m.layers:
                l.bias = rng.standard_normal(l.bias.shape)
        X = rng.standard_normal((int(rng.integers(1, 9)), widths[0]))
        Y = rng.standard_normal((len(X), widths[-1]))
        _, grads = gradients(m, X, Y)
        analytic = np.concatenate([np.r_[dW.ravel(), [] if db is None else db] for dW, db in grads])

        def loss(theta):
            mm = m.copy()
            mm.set_parameters(theta)
            return gradients(mm, X, Y)[0]

        numeric = central_difference(loss, m.parameters())
        rel = np.linalg.norm(analytic - numeric) / max(np.linalg.norm(numeric), 1e-12)
        assert rel < 1e-4


class TestSgd:
    def test_deterministic_without_noise(self):
        m = build_mlp([3, 5, 2], seed=0)
        X, Y = np.ones((4, 3)), np.zeros((4, 2))
        a, b = sgd_step(m, X, Y, 0.01), sgd_step(m, X, Y, 0.01)
        np.testing.assert_array_equal(a.parameters(), b.parameters())

    def test_noise_preserves_expected_update(self):
        m = build_mlp([3, 2], activation="linear", seed=0)
        X = np.random.default_rng(1).standard_normal((5, 3))
        Y = np.random.default_rng(2).standard_normal((5, 2))
        clean = sgd_step(m, X, Y, 0.01).parameters()
        rng = np.random.default_rng(3)
        draws = np.array([sgd_step(m, X, Y, 0.01, 0.1, rng).parameters() for _ in range(10_000)])
        se = draws.std(axis=0, ddof=1) / np.sqrt(len(draws))
        assert np.all(np.abs(draws.mean(axis=0) - clean) < 3.5 * se)

    def test_noise_touches_every_layer(self):
        m = build_mlp([3, 4, 2], seed=0)
        new = sgd_step(m, np.zeros((1, 3)), np.zeros((1, 2)), 0.1, 0.01, np.random.default_rng(0))
        for a, b in zip(m.layers, new.layers):
            assert np.all(a.weight != b.weight)

    def test_bad_args(self):
        with pytest.raises(UsageError):
            sgd_step(build_mlp([2, 1]), np.ones((1, 2)), np.ones((1, 1)), 0.0)

    def test_full_batch_descent_convex(self):
        rng = np.random.default_rng(0)
        X = rng.standard_normal((40, 3))
        Y = X @ rng.standard_normal((3, 2)) + 0.1 * rng.standard_normal((40, 2))
        m = build_mlp([3, 2], activation="linear", seed=0)
        prev = gradients(m, X, Y)[0]
        for _ in range(200):
            m = sgd_step(m, X, Y, 1e-3)
            cur = gradients(m, X, Y)[0]
            assert cur <= prev + 1e-12
            prev = cur


class TestTrain:
    def test_convex_toy_converges(self):
        d = toy_separable()
        m = build_mlp([2, 2], activation="linear", seed=0)
        _, losses = train(m, d, TrainConfig(0.005, 0.0, 50, 16))
        assert len(losses) == 51
        assert losses[-1] < 0.1 * losses[0]

    def test_epochs_zero(self):
        m = build_mlp([2, 3, 2], seed=0)
        out, losses = train(m, toy_separable(), TrainConfig(epochs=0))
        np.testing.assert_array_equal(out.parameters(), m.parameters())
        assert len(losses) == 1

    def test_same_seed_same_trace(self):
        m = build_mlp([2, 8, 2], seed=0)
        cfg = TrainConfig(0.01, 0.0001, 5, 8, weight_noise_sigma=0.01, seed=3)
        a = train(m, toy_separable(), cfg)
        b = train(m, toy_separable(), cfg)
        np.testing.assert_array_equal(a[1], b[1])
        np.testing.assert_array_equal(a[0].parameters(), b[0].parameters())

    def test_lr_schedule_stops(self):
        cfg = TrainConfig(0.01, 0.004, 10, 8)
        assert cfg.learning_rate(2) == pytest.approx(0.002)
        assert cfg.learning_rate(3) == 0.0
        _, losses = train(build_mlp([2, 2], seed=0), toy_separable(), cfg)
        assert len(losses) == 4

    def test_divergence(self):
        with pytest.raises(TrainingError) as err:
            train(build_mlp([2, 50, 50, 2], "linear", seed=0), toy_separable(), TrainConfig(5.0, 0.0, 50, 80))
        assert err.value.epoch >= 1


class TestActivations:
    def test_layer_zero_identity(self):
        c = PointCloud(np.ones((3, 2)), labels=[0, 1, 1])
        assert extract_activations(build_mlp([2, 2]), c, 0) is c

    def test_last_equals_forward(self):
        m = build_mlp([3, 6, 6, 2], seed=2)
        c = PointCloud(np.random.default_rng(0).standard_normal((10, 3)), labels=np.arange(10) % 2)
        out = extract_activations(m, c, 3)
        for x, row in zip(c.points, out.points):
            np.testing.assert_allclose(forward(m, x)[0], row, rtol=0, atol=1e-12)
        np.testing.assert_array_equal(out.labels, c.labels)

    def test_relu_nonnegative_and_pre(self):
        m = build_mlp([3, 6, 2], seed=2)
        c = PointCloud(np.random.default_rng(0).standard_normal((20, 3)))
        post = extract_activations(m, c, 1).points
        pre = extract_activations(m, c, 1, pre_activation=True).points
        assert np.all(post >= 0) and np.any(pre < 0)
        np.testing.assert_array_equal(post, np.maximum(pre, 0))

    def test_out_of_range(self):
        with pytest.raises(UsageError):
            extract_activations(build_mlp([2, 2]), PointCloud(np.ones((2, 2))), 2)

    @settings(max_examples=30, deadline=None)
    @given(x=st.lists(st.floats(0, 10), min_size=6, max_size=6))
    def test_identity_init_passes_nonnegative(self, x):
        m = build_mlp([6, 6, 6, 6, 6], init="identity", seed=0)
        h = np.array(x)
        _, acts = forward(m, np.zeros(6))
        # hidden layers after the first are identities on nonnegative input
        for layer in m.layers[1:-1]:
            np.testing.assert_array_equal(np.maximum(layer.weight @ h, 0), h)


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        m = build_mlp([4, 7, 3], bias=True, seed=9)
        m.layers[0].bias = np.random.default_rng(0).standard_normal(7) / 3
        save_model(tmp_path / "m.json", m)
        back = load_model(tmp_path / "m.json")
        np.testing.assert_array_equal(back.parameters(), m.parameters())
        assert [l.activation for l in back.layers] == ["relu", "linear"]

    def test_rejects_wrong_format(self, tmp_path):
        doc = model_to_dict(build_mlp([2, 2]))
        with pytest.raises(DataFormatError):
            model_from_dict({**doc, "version": 2})
        doc["layers"][0]["weights"] = [1.0]
        with pytest.raises(DataFormatError):
            model_from_dict(doc)
        (tmp_path / "bad.json").write_text("{not json")
        with pytest.raises(DataFormatError):
            load_model(tmp_path / "bad.json")
