import numpy as np
import pytest
from hypothesis import given, strategies as st

from vqrim.errors import ConfigError, ShapeError, StateError, TrainingError
from vqrim.nn import (ACTIVATIONS, Adam, FeedForwardNet, Layer, grad_check, numerical_gradient,
                      relative_error)


def quadratic_loss(out):
    return 0.5 * float(np.sum(out ** 2)), out


def test_identity_layer_passes_input_through():
    net = FeedForwardNet.from_layers([Layer(np.eye(2), np.zeros(2))])
    np.testing.assert_array_equal(net.forward(np.array([[1.0, 2.0]])), [[1.0, 2.0]])


def test_zero_weights_give_zero_output(rng):
    net = FeedForwardNet.from_layers([Layer(np.zeros((3, 4)), np.zeros(4), "relu"),
                                      Layer(np.zeros((4, 2)), np.zeros(2))])
    np.testing.assert_array_equal(net.forward(rng.normal(size=(5, 3))), np.zeros((5, 2)))


def test_two_layer_forward_matches_hand_evaluation():
    w1 = np.array([[0.5, -1.0], [2.0, 0.25]])
    b1 = np.array([0.1, 0.2])
    w2 = np.array([[1.0], [-3.0]])
    b2 = np.array([0.05])
    net = FeedForwardNet.from_layers([Layer(w1, b1, "relu"), Layer(w2, b2)])
    # hidden = relu((1,0) W1 + b1) = relu(0.6, -0.8) = (0.6, 0); out = 0.6 * 1 + 0.05
    np.testing.assert_allclose(net.forward(np.array([[1.0, 0.0]])), [[0.65]], rtol=0, atol=1e-15)


def test_forward_rejects_wrong_width(rng):
    net = FeedForwardNet([3, 2], rng=rng)
    with pytest.raises(ShapeError):
        net.forward(np.zeros((2, 4)))


def test_layers_must_chain():
    with pytest.raises(ShapeError):
        FeedForwardNet.from_layers([Layer(np.zeros((2, 3)), np.zeros(3)),
                                    Layer(np.zeros((2, 1)), np.zeros(1))])


def test_backward_before_forward_is_a_state_error(rng):
    with pytest.raises(StateError):
        FeedForwardNet([2, 2], rng=rng).backward(np.zeros((1, 2)))


def test_linear_weight_gradient_is_batch_summed_outer_product(rng):
    w = rng.normal(size=(3, 2))
    net = FeedForwardNet.from_layers([Layer(w, np.zeros(2))])
    x = rng.normal(size=(4, 3))
    g = rng.normal(size=(4, 2))
    net.forward(x)
    grads, gin = net.backward(g)
    np.testing.assert_allclose(grads["0.weight"], x.T @ g)
    np.testing.assert_allclose(grads["0.bias"], g.sum(axis=0))
    np.testing.assert_allclose(gin, g @ w.T)


def test_zero_upstream_gives_zero_gradients(rng):
    net = FeedForwardNet([3, 5, 2], rng=rng)
    net.forward(rng.normal(size=(4, 3)))
    grads, gin = net.backward(np.zeros((4, 2)))
    assert all(not g.any() for g in grads.values())
    assert not gin.any()


def test_small_net_matches_finite_differences(rng):
    net = FeedForwardNet([3, 2, 2], hidden_activation="tanh", rng=rng)
    report = grad_check(net, quadratic_loss, rng.normal(size=(5, 3)))
    assert report.passed, report.errors


@pytest.mark.parametrize("activation", ACTIVATIONS)
def test_every_activation_matches_finite_differences(activation, rng):
    net = FeedForwardNet([10, 10, 10], hidden_activation=activation,
                         output_activation=activation, rng=rng)
    report = grad_check(net, quadratic_loss, rng.normal(size=(6, 10)), tolerance=1e-4)
    assert report.max_error < 1e-4, report.errors


def test_quadratic_loss_on_linear_net_is_near_exact(rng):
    net = FeedForwardNet([4, 3], rng=rng)
    assert grad_check(net, quadratic_loss, rng.normal(size=(3, 4))).max_error < 1e-6


def test_corrupted_gradient_fails_the_check(rng):
    net = FeedForwardNet([4, 5, 3], hidden_activation="tanh", rng=rng)

    def corrupt(grads):
        grads = dict(grads)
        grads["0.weight"] = grads["0.weight"] * 1.1
        return grads

    report = grad_check(net, quadratic_loss, rng.normal(size=(3, 4)), grad_override=corrupt)
    assert not report.passed
    assert report.errors["0.weight"] > 1e-3


def test_dropout_backward_matches_finite_differences_at_fixed_mask(rng):
    net = FeedForwardNet([5, 8, 3], hidden_activation="tanh", dropout=0.5, rng=rng)
    x = rng.normal(size=(4, 5))

    def loss():
        out = net.forward(x, training=True, rng=np.random.default_rng(7))
        return 0.5 * float(np.sum(out ** 2))

    out = net.forward(x, training=True, rng=np.random.default_rng(7))
    grads, _ = net.backward(out)
    for name, arr in net.parameters().items():
        assert relative_error(grads[name], numerical_gradient(loss, arr)) < 1e-4


def test_dropout_needs_rng_and_inference_is_deterministic(rng):
    net = FeedForwardNet([4, 16, 2], dropout=0.5, rng=rng)
    x = rng.normal(size=(3, 4))
    with pytest.raises(ConfigError):
        net.forward(x, training=True)
    assert np.array_equal(net.forward(x), net.forward(x))
    a = net.forward(x, training=True, rng=np.random.default_rng(1))
    assert not np.array_equal(a, net.forward(x))


def test_adam_zero_gradient_leaves_parameters_unchanged():
    p = {"w": np.array([1.0, -2.0])}
    Adam(lr=0.1).step(p, {"w": np.zeros(2)})
    np.testing.assert_array_equal(p["w"], [1.0, -2.0])


def test_adam_first_step_moves_by_learning_rate():
    # m_hat = g, v_hat = g^2, so the step is lr * g / |g| = 0.1
    p = {"w": np.array([0.0])}
    Adam(lr=0.1, eps=1e-12).step(p, {"w": np.array([1.0])})
    np.testing.assert_allclose(p["w"], [-0.1], atol=1e-10)


def test_decoupled_decay_shrinks_parameters_geometrically():
    p = {"w": np.array([2.0, -4.0])}
    opt = Adam(lr=0.1, weight_decay=0.5, kind="adamw")
    for _ in range(3):
        opt.step(p, {"w": np.zeros(2)})
    np.testing.assert_allclose(p["w"], np.array([2.0, -4.0]) * (1 - 0.05) ** 3)


def _reference_adam(w, grads, lr, b1, b2, eps):
    m = v = 0.0
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        w = w - lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)
    return w


def test_adam_matches_reference_recurrence(rng):
    w0 = rng.normal(size=5)
    grads = [rng.normal(size=5) for _ in range(6)]
    p = {"w": w0.copy()}
    opt = Adam(lr=0.01)
    for g in grads:
        opt.step(p, {"w": g})
    np.testing.assert_allclose(p["w"], _reference_adam(w0, grads, 0.01, 0.9, 0.999, 1e-8),
                               rtol=1e-13, atol=1e-15)
    assert opt.step_count == len(grads)
    assert opt.m["w"].shape == opt.v["w"].shape == w0.shape


@given(st.integers(0, 2 ** 31 - 1))
def test_adamw_without_decay_equals_adam(seed):
    r = np.random.default_rng(seed)
    w = r.normal(size=(3, 2))
    grads = [r.normal(size=(3, 2)) for _ in range(4)]
    a, b = {"w": w.copy()}, {"w": w.copy()}
    oa, ob = Adam(lr=1e-3), Adam(lr=1e-3, kind="adamw")
    for g in grads:
        oa.step(a, {"w": g})
        ob.step(b, {"w": g})
    assert np.array_equal(a["w"], b["w"])


def test_non_finite_gradient_names_the_parameter():
    p = {"layer.weight": np.zeros(2)}
    with pytest.raises(TrainingError, match="layer.weight"):
        Adam().step(p, {"layer.weight": np.array([0.0, np.nan])})


def test_optimizer_state_round_trip(rng):
    p = {"w": rng.normal(size=3)}
    opt = Adam(lr=0.01, weight_decay=0.1, kind="adamw")
    opt.step(p, {"w": rng.normal(size=3)})
    clone = Adam.from_state(opt.state_meta(), opt.state_arrays("o"), "o")
    q = {"w": p["w"].copy()}
    g = rng.normal(size=3)
    opt.step(p, {"w": g})
    clone.step(q, {"w": g})
    assert np.array_equal(p["w"], q["w"])
