import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fwips import ann
from fwips.radiomap import AffineNormalizer

from gradcheck import max_relative_error, random_case


def _net(hidden=(5,), in_dim=3, out_dim=2, seed=0):
    return ann.init_network(hidden, in_dim, out_dim, seed=seed)


def test_init_is_seeded_and_bounded():
    a, b, c = _net(seed=3), _net(seed=3), _net(seed=4)
    assert a == b and a != c
    p = a.flat_parameters()
    assert np.all((p >= -0.5) & (p <= 0.5))
    assert a.widths == (3, 5, 2) and a.hidden_widths == (5,)


def test_init_draw_order():
    rng = np.random.default_rng(7)
    W1 = rng.uniform(-0.5, 0.5, size=(3, 4))
    b1 = rng.uniform(-0.5, 0.5, size=4)
    net = ann.init_network([4], 3, 1, seed=7)
    assert np.array_equal(net.layers[0].weights, W1) and np.array_equal(net.layers[0].biases, b1)


@pytest.mark.parametrize("hidden", [(), (0,), (3, -1)])
def test_init_rejects_bad_widths(hidden):
    with pytest.raises(ValueError):
        ann.init_network(hidden, 2, 2)


def test_forward_by_hand():
    W1 = np.array([[1.0, -1.0], [0.5, 2.0]])
    b1 = np.array([0.1, -0.2])
    W2 = np.array([[2.0], [-3.0]])
    b2 = np.array([0.5])
    net = ann.Network(AffineNormalizer.identity(2),
                      (ann.Layer(W1, b1, ann.SIGMOID), ann.Layer(W2, b2, ann.LINEAR)),
                      AffineNormalizer(np.array([10.0]), np.array([4.0])))
    x = np.array([0.3, 0.8])
    h = 1 / (1 + np.exp(-(W1.T @ x + b1)))
    expected = 10.0 + 4.0 * (W2.T @ h + b2)
    assert np.allclose(net(x), expected, rtol=0, atol=1e-14)
    assert net(np.stack([x, x])).shape == (2, 1)


def test_network_validation():
    l1 = ann.Layer(np.zeros((2, 3)), np.zeros(3), ann.SIGMOID)
    l2 = ann.Layer(np.zeros((4, 1)), np.zeros(1), ann.LINEAR)
    with pytest.raises(ValueError):
        ann.Network(AffineNormalizer.identity(2), (l1, l2), AffineNormalizer.identity(1))
    with pytest.raises(ValueError):
        ann.Layer(np.zeros((2, 3)), np.zeros(2), ann.SIGMOID)


def test_parameter_roundtrip(rng):
    net = _net((4, 3))
    p = rng.normal(size=net.flat_parameters().size)
    assert np.array_equal(net.with_parameters(p).flat_parameters(), p)
    with pytest.raises(ValueError):
        net.with_parameters(p[:-1])


def test_gradients_match_finite_differences(rng):
    for _ in range(10):
        net, x, y = random_case(rng)
        assert max_relative_error(net, x, y) < 1e-5


def test_backward_output_sensitivity():
    net = _net()
    x, y = np.array([0.1, 0.2, 0.3]), np.array([1.0, -1.0])
    st_ = ann.backward(net, x, y)
    assert np.allclose(st_.sensitivities[-1], -2.0 * (y - st_.activations[-1]))
    assert len(st_.weight_grads) == len(net.layers) + 1 and st_.weight_grads[0] is None


def test_sgd_step_reduces_loss():
    net = _net((6,), 2, 1, seed=1)
    X = np.array([[0.0, 0.0], [1.0, 1.0], [0.5, 0.2]])
    Y = np.array([[0.3], [0.7], [0.1]])
    before = ann.mse(net, X, Y)
    for _ in range(50):
        net = ann.sgd_step(net, X, Y, 0.1)
    assert ann.mse(net, X, Y) < before


@pytest.mark.parametrize("n,sizes", [(10, (7, 1, 2)), (20, (14, 3, 3)), (3, (1, 1, 1)),
                                     (100, (70, 15, 15)), (4, (2, 1, 1))])
def test_split_sizes(n, sizes):
    assert ann.split_sizes(n, (0.7, 0.15, 0.15)) == sizes


def test_split_sizes_errors():
    with pytest.raises(ValueError):
        ann.split_sizes(2, (0.7, 0.15, 0.15))
    with pytest.raises(ValueError):
        ann.split_sizes(10, (0.5, 0.6))


@settings(max_examples=100, deadline=None)
@given(st.integers(3, 500), st.integers(0, 2**31))
def test_partition_is_disjoint_cover(n, seed):
    parts = ann.partition(n, seed=seed)
    allidx = np.concatenate(parts)
    assert sorted(allidx.tolist()) == list(range(n))
    assert tuple(len(p) for p in parts) == ann.split_sizes(n, (0.7, 0.15, 0.15))
    assert all(len(p) >= 1 for p in parts)


def test_early_stopper_counts_strict_increases():
    s = ann.EarlyStopper(3, 1.0, np.zeros(1))
    assert not s.update(1, 0.9, np.array([1.0]))
    assert not s.update(2, 1.0, np.array([2.0]))
    assert not s.update(3, 1.0, np.array([3.0]))  # equality resets
    assert s.failures == 0 and s.anchor_epoch == 3
    assert not s.update(4, 1.1, np.array([4.0]))
    assert not s.update(5, 1.2, np.array([5.0]))
    assert s.update(6, 1.3, np.array([6.0]))
    assert s.anchor_params.tolist() == [3.0]


def test_config_validation():
    with pytest.raises(ValueError):
        ann.TrainingConfig(learning_rate=-1)
    with pytest.raises(ValueError):
        ann.TrainingConfig(batch_size=0)
    assert ann.TrainingConfig.for_radio_map().max_error == 1.0
    assert ann.TrainingConfig.for_localization(seed=3).seed == 3


def _regression_data(seed=0, n=60):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1, 1, size=(n, 2))
    Y = np.column_stack([np.sin(X[:, 0]) + X[:, 1] ** 2, X[:, 0] * X[:, 1]])
    return X, Y


def test_train_is_deterministic():
    X, Y = _regression_data()
    net = ann.init_network([6], 2, 2, seed=1, input_normalizer=AffineNormalizer.fit(X),
                           output_normalizer=AffineNormalizer.fit(Y))
    cfg = ann.TrainingConfig(max_epochs=40, max_error=0.0, seed=5)
    a, b = ann.train(net, X, Y, cfg), ann.train(net, X, Y, cfg)
    assert a.network == b.network and a.mse_history == b.mse_history


def test_train_reports_history_and_selection():
    X, Y = _regression_data()
    net = ann.init_network([6], 2, 2, seed=1, input_normalizer=AffineNormalizer.fit(X),
                           output_normalizer=AffineNormalizer.fit(Y))
    out = ann.train(net, X, Y, ann.TrainingConfig(max_epochs=30, max_error=0.0))
    assert len(out.mse_history) == out.epochs_run
    assert out.valid_mse >= 0 and out.test_mse >= 0
    assert out.mse_history[-1][0] < ann.mse(net, X, Y)


def test_inconsistent_partitions_return_best_attempt():
    X, Y = _regression_data(n=30)
    net = ann.init_network([4], 2, 2, seed=2, input_normalizer=AffineNormalizer.fit(X),
                           output_normalizer=AffineNormalizer.fit(Y))
    cfg = ann.TrainingConfig(max_epochs=5, max_error=0.0, consistency_factor=1e-9, max_repartitions=3)
    out = ann.train(net, X, Y, cfg)
    assert not out.consistent and out.attempts == 4
    tests = []
    for attempt in range(4):
        seq = np.random.SeedSequence([cfg.seed, attempt])
        ps, ss = (int(s.generate_state(1)[0]) for s in seq.spawn(2))
        tr, va, te = ann.partition(30, cfg.split_ratios, ps)
        tests.append(ann.fit_partitioned(net, (X[tr], Y[tr]), (X[va], Y[va]), (X[te], Y[te]), cfg,
                                         shuffle_seed=ss).test_mse)
    assert out.test_mse == min(tests)


def test_divergence_is_reported():
    X, Y = _regression_data()
    net = ann.init_network([6], 2, 2, seed=1, input_normalizer=AffineNormalizer.fit(X),
                           output_normalizer=AffineNormalizer.fit(Y))
    out = ann.train(net, X, Y, ann.TrainingConfig(learning_rate=1e6, max_epochs=50, max_error=0.0))
    assert out.stop_reason == ann.StopReason.DIVERGED
    assert "learning rate" in out.diagnostic
    assert np.all(np.isfinite(out.network.flat_parameters()))


def test_network_file_roundtrip(tmp_path, rng):
    X = rng.normal(size=(4, 3))
    net = ann.init_network([5, 2], 3, 2, seed=9, input_normalizer=AffineNormalizer.fit(X))
    ann.save_network(net, tmp_path / "n.txt", {"task": "la"})
    back, meta = ann.load_network(tmp_path / "n.txt")
    assert back == net and meta == {"task": "la"}


def test_network_file_errors(tmp_path):
    p = tmp_path / "n.txt"
    p.write_text("not a network\n")
    with pytest.raises(ValueError):
        ann.load_network(p)
    p.write_text(ann.FORMAT_TAG + "\nwidths 2 3 1\n")
    with pytest.raises(ValueError):
        ann.load_network(p)


def test_zero_network_outputs_zero():
    net = ann.init_network([4], 3, 2)
    net = net.with_parameters(np.zeros_like(net.flat_parameters()))
    assert net(np.array([0.3, -1.0, 2.0])).tolist() == [0.0, 0.0]


def test_forward_matches_dense_oracle(rng):
    net = ann.init_network([7, 5], 4, 3, seed=8)
    X = rng.uniform(0, 1, size=(25, 4))
    a = X
    for layer in net.layers:
        z = np.einsum("ti,io->to", a, layer.weights) + layer.biases
        a = z if layer.activation == ann.LINEAR else 1 / (1 + np.exp(-z))
    assert np.allclose(net(X), a, rtol=0, atol=1e-12)


def test_hidden_activations_in_unit_interval(rng):
    net = ann.init_network([6, 6], 3, 1, seed=1)
    st_ = ann.backward(net, rng.normal(0, 50, size=3), [0.0])
    for a in st_.activations[1:-1]:
        assert np.all((a >= 0) & (a <= 1))


def test_zero_residual_gives_zero_gradients():
    net = ann.init_network([5], 3, 2, seed=2)
    x = np.array([0.2, 0.4, 0.6])
    st_ = ann.backward(net, x, net(x))
    assert all(np.all(g == 0) for g in st_.weight_grads[1:] + st_.bias_grads[1:])


def test_output_layer_gradient_closed_form(rng):
    # the linear output layer sees the least-squares gradient -2 (y - W^T h - b) h^T
    net = ann.init_network([4], 3, 2, seed=5)
    x, y = rng.uniform(0, 1, size=3), rng.uniform(-1, 1, size=2)
    st_ = ann.backward(net, x, y)
    h = st_.activations[1]
    out = net.layers[1]
    r = y - (out.weights.T @ h + out.biases)
    assert np.allclose(st_.weight_grads[2], np.outer(h, -2 * r), rtol=0, atol=1e-14)
    assert np.allclose(st_.bias_grads[2], -2 * r, rtol=0, atol=1e-14)


def test_sgd_zero_rate_is_identity():
    net = _net()
    assert ann.sgd_step(net, np.ones((2, 3)), np.zeros((2, 2)), 0.0) == net


def test_sgd_single_example_by_hand():
    net = _net((2,), 2, 1, seed=6)
    x, y = np.array([0.3, 0.9]), np.array([0.5])
    W1, b1 = net.layers[0].weights, net.layers[0].biases
    W2, b2 = net.layers[1].weights, net.layers[1].biases
    h = 1 / (1 + np.exp(-(W1.T @ x + b1)))
    s2 = -2 * (y - (W2.T @ h + b2))
    s1 = h * (1 - h) * (W2 @ s2)
    new = ann.sgd_step(net, x, y, 0.1)
    assert np.allclose(new.layers[1].weights, W2 - 0.1 * np.outer(h, s2), rtol=0, atol=1e-15)
    assert np.allclose(new.layers[0].weights, W1 - 0.1 * np.outer(x, s1), rtol=0, atol=1e-15)
    assert np.allclose(new.layers[0].biases, b1 - 0.1 * s1, rtol=0, atol=1e-15)


def test_mse_examples(rng):
    net = ann.init_network([3], 2, 2, seed=0)
    X = rng.uniform(size=(1, 2))
    assert ann.mse(net, X, net(X)) == 0.0
    assert ann.mse(net, X, net(X) + 1.0) == pytest.approx(1.0, abs=1e-15)
    X = rng.uniform(size=(30, 2))
    Y = rng.normal(size=(30, 2))
    P = net(X)
    acc = 0.0
    for p, y in zip(P, Y):
        acc += sum((a - b) ** 2 for a, b in zip(p, y)) / 2
    assert abs(ann.mse(net, X, Y) - acc / 30) <= 1e-12
    with pytest.raises(ValueError):
        ann.mse(net, np.zeros((0, 2)), np.zeros((0, 2)))


def test_init_law_of_large_numbers():
    net = ann.init_network([300, 300], 30, 30, seed=0)
    p = net.flat_parameters()
    assert p.size > 100_000
    assert abs(p.mean()) <= 3 * (1 / math.sqrt(12)) / math.sqrt(p.size)


def test_partition_seeds_shuffle_differently():
    a, b = ann.partition(50, seed=1), ann.partition(50, seed=2)
    assert [len(p) for p in a] == [len(p) for p in b]
    assert any(not np.array_equal(x, y) for x, y in zip(a, b))


def test_rollback_epoch_is_window_minimum():
    X = np.random.default_rng(1).uniform(0, 1, size=(30, 2))
    net = ann.init_network([3], 2, 1, seed=3)
    cfg = ann.TrainingConfig(learning_rate=0.05, max_error=0.0, seed=11, batch_size=20)
    out = ann.fit_partitioned(net, (X[:20], np.ones((20, 1))), (X[20:25], np.full((5, 1), 0.4)),
                              (X[25:], np.ones((5, 1))), cfg)
    assert out.stop_reason == ann.StopReason.VALIDATION_FAILURES
    valid = [v for _, v in out.mse_history]
    window = valid[out.selected_epoch - 1:]
    assert valid[out.selected_epoch - 1] == min(window)
    assert out.valid_mse == valid[out.selected_epoch - 1]
