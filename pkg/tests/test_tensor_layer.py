import itertools
import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from ftnet.errors import ShapeError, StateError
from ftnet.network import DenseLayer
from ftnet.tensor_core import kron_chain, vec
from ftnet.tensor_layer import (
    ACTIVATIONS,
    Activation,
    TensorLayer,
    backward,
    forward,
    init_layer,
    param_count_dense,
    param_count_tensor,
)

from oracles import central_differences, loop_tensor_layer, max_rel_error

ALL_ACTIVATIONS = [Activation(k) for k in ACTIVATIONS] + [Activation("leaky_relu", 0.05)]


def random_layer(rng, ins, outs, activation="identity", bias_scale=0.5):
    layer = init_layer(ins, outs, activation, rng)
    layer.bias[...] = rng.uniform(-bias_scale, bias_scale, size=layer.bias.shape)
    return layer


@pytest.mark.parametrize("act", ALL_ACTIVATIONS, ids=lambda a: f"{a.kind}-{a.slope}")
def test_activation_derivative_matches_differences(act, rng):
    h = rng.uniform(-3, 3, size=200)
    h = h[np.abs(h) > 1e-3]  # stay off the relu kink
    numeric = (act(h + 1e-6) - act(h - 1e-6)) / 2e-6
    assert max_rel_error(act.derivative(h), numeric) <= 1e-6


def test_activation_parse():
    assert Activation.parse("leaky_relu(0.1)") == Activation("leaky_relu", 0.1)
    assert Activation.parse({"kind": "tanh"}) == Activation("tanh")
    with pytest.raises(ValueError):
        Activation("softmax")


def test_sigmoid_is_finite_at_extremes():
    out = Activation("sigmoid")(np.array([-1e4, 0.0, 1e4]))
    np.testing.assert_array_equal(out, [0.0, 0.5, 1.0])


# -- forward ----------------------------------------------------------------

def test_forward_identity_layer_passes_input_through(rng):
    layer = TensorLayer([np.eye(3), np.eye(4)], np.zeros((3, 4)))
    x = rng.normal(size=(3, 4, 5))
    np.testing.assert_array_equal(forward(layer, x).output, x)


def test_forward_scalar_sigmoid_neuron():
    w, b, x = 1.7, -0.3, 0.8
    layer = TensorLayer([np.array([[w]])], np.array([b]), Activation("sigmoid"))
    out = forward(layer, np.array([[x]])).output
    assert out.shape == (1, 1)
    assert out[0, 0] == pytest.approx(1.0 / (1.0 + math.exp(-(w * x + b))), rel=1e-15)


def test_forward_matches_loop_oracle(rng):
    layer = random_layer(rng, (3, 4), (2, 2), "tanh")
    x = rng.uniform(-1, 1, size=(3, 4, 5))
    expected = loop_tensor_layer(x, layer.weights, layer.bias, np.tanh)
    np.testing.assert_allclose(forward(layer, x).output, expected, atol=1e-12)


def test_forward_order3_matches_loop_oracle(rng):
    layer = random_layer(rng, (2, 3, 2), (3, 2, 2), "leaky_relu")
    x = rng.uniform(-1, 1, size=(2, 3, 2, 3))
    g = layer.activation
    expected = loop_tensor_layer(x, layer.weights, layer.bias, lambda v: float(g(np.array(v))))
    np.testing.assert_allclose(forward(layer, x).output, expected, atol=1e-12)


def test_forward_rejects_bad_shapes(rng):
    layer = random_layer(rng, (3, 4), (2, 2))
    with pytest.raises(ShapeError):
        forward(layer, rng.normal(size=(4, 3, 2)))
    with pytest.raises(ShapeError):
        forward(layer, rng.normal(size=(3, 4)))  # missing batch mode


def test_layer_invariants_checked():
    with pytest.raises(ShapeError):
        TensorLayer([np.eye(2)], np.zeros((2, 2)))
    with pytest.raises(ShapeError):
        TensorLayer([np.eye(2), np.ones((3, 2))], np.zeros((2, 2)))


# -- backward ---------------------------------------------------------------

def test_backward_zero_upstream(rng):
    layer = random_layer(rng, (3, 2), (2, 4), "sigmoid")
    cache = forward(layer, rng.normal(size=(3, 2, 3)))
    grads = backward(layer, cache, np.zeros_like(cache.output))
    for g in grads.params() + [grads.d_input]:
        assert not np.any(g)


def test_backward_scalar_chain_rule():
    w, b, x = 1.5, 0.25, -2.0
    layer = TensorLayer([np.array([[w]])], np.array([b]))
    cache = forward(layer, np.array([[x]]))
    grads = backward(layer, cache, np.ones((1, 1)))
    assert grads.d_weights[0][0, 0] == x
    assert grads.d_bias[0] == 1.0
    assert grads.d_input[0, 0] == w


def test_backward_rejects_foreign_cache(rng):
    a = random_layer(rng, (2, 2), (2, 2))
    b = random_layer(rng, (2, 2), (2, 2))
    cache = forward(a, rng.normal(size=(2, 2, 1)))
    with pytest.raises(StateError):
        backward(b, cache, np.ones_like(cache.output))


def _fd_check(layer, x, rng, tol):
    r = rng.normal(size=forward(layer, x).output.shape)

    def f():
        return float(np.sum(r * forward(layer, x).output))

    cache = forward(layer, x)
    grads = backward(layer, cache, r)
    numeric = central_differences(f, layer.params() + [x])
    analytic = grads.params() + [grads.d_input]
    for a, n in zip(analytic, numeric):
        assert max_rel_error(a, n) <= tol


def test_backward_matches_finite_differences(rng):
    layer = random_layer(rng, (3, 3), (2, 2), "sigmoid")
    x = rng.uniform(-1, 1, size=(3, 3, 4))
    _fd_check(layer, x, rng, 1e-5)


@settings(max_examples=40, deadline=None)
@given(order=st.integers(1, 3), seed=st.integers(0, 2**32 - 1),
       act=st.sampled_from(ALL_ACTIVATIONS), batch=st.integers(1, 3), data=st.data())
def test_gradients_property(order, seed, act, batch, data):
    ins = tuple(data.draw(st.lists(st.integers(1, 5), min_size=order, max_size=order)))
    outs = tuple(data.draw(st.lists(st.integers(1, 5), min_size=order, max_size=order)))
    assume(math.prod(ins) * math.prod(outs) <= 400)
    rng = np.random.default_rng(seed)
    layer = random_layer(rng, ins, outs, act)
    x = rng.uniform(-1, 1, size=ins + (batch,))
    if act.kind in ("relu", "leaky_relu"):
        assume(np.min(np.abs(forward(layer, x).pre_activation)) > 1e-3)
    _fd_check(layer, x, rng, 1e-5)


@pytest.mark.parametrize("act", ALL_ACTIVATIONS, ids=lambda a: a.kind)
def test_order_one_matches_dense_layer(act, rng):
    tl = random_layer(rng, (5,), (3,), act)
    dl = DenseLayer(tl.weights[0].copy(), tl.bias.copy(), act)
    x = rng.normal(size=(5, 4))
    ct, cd = forward(tl, x), dl.forward(x)
    assert np.max(np.abs(ct.output - cd.output)) <= 1e-12
    up = rng.normal(size=ct.output.shape)
    gt, gd = backward(tl, ct, up), dl.backward(cd, up)
    for a, b in zip(gt.params() + [gt.d_input], gd.params() + [gd.d_input]):
        assert np.max(np.abs(a - b)) <= 1e-12


@pytest.mark.parametrize("ins,outs", [((3,), (2,)), ((2, 3), (4, 2)), ((2, 3, 2), (3, 1, 2)),
                                      ((1, 4, 2, 2), (2, 2, 3, 1))])
def test_vectorized_layer_equivalence(ins, outs, rng):
    layer = random_layer(rng, ins, outs, "tanh")
    x = rng.normal(size=ins + (3,))
    out = forward(layer, x).output
    big = kron_chain(layer.weights[::-1])
    for c in range(3):
        expected = np.tanh(big @ vec(x[..., c]) + vec(layer.bias))
        assert np.max(np.abs(vec(out[..., c]) - expected)) <= 1e-10


# -- parameter accounting ---------------------------------------------------

def test_param_count_examples():
    assert param_count_tensor((28, 28), (60, 60), (1, 1)) == 7081
    assert param_count_tensor((1, 1), (1, 1), (1, 1)) == 6
    assert param_count_dense(784, 3600, 1) == 2_829_601
    assert param_count_dense(1, 1, 1) == 4


def test_param_count_order_one_collapses_to_dense():
    for a, b, c in itertools.product(range(1, 101), repeat=3):
        assert param_count_tensor((a,), (b,), (c,)) == param_count_dense(a, b, c)


def test_param_count_matches_actual_layers(rng):
    first = init_layer((4, 3, 2), (2, 5, 3), rng=rng)
    second = init_layer((2, 5, 3), (3, 1, 2), rng=rng)
    assert first.num_params() + second.num_params() == param_count_tensor(
        (4, 3, 2), (2, 5, 3), (3, 1, 2))


def _balanced_factorizations(total, order):
    out = []
    for dims in itertools.product(range(2, total + 1), repeat=order):
        if math.prod(dims) == total and max(dims) <= 2 * min(dims):
            out.append(dims)
    return out


@pytest.mark.parametrize("order", [2, 3])
def test_compression_never_loses_for_balanced_factorizations(order):
    totals = sorted({math.prod(d) for d in itertools.product(range(2, 7), repeat=order)})
    checked = 0
    for i_tot, j_tot, k_tot in itertools.product(totals[:8], repeat=3):
        for ins in _balanced_factorizations(i_tot, order)[:1]:
            for hid in _balanced_factorizations(j_tot, order)[:1]:
                for outs in _balanced_factorizations(k_tot, order)[:1]:
                    assert param_count_tensor(ins, hid, outs) <= param_count_dense(
                        i_tot, j_tot, k_tot)
                    checked += 1
    assert checked > 100


def test_param_count_rejects_order_mismatch():
    with pytest.raises(ShapeError):
        param_count_tensor((2, 2), (2,), (2, 2))


# -- initialization ---------------------------------------------------------

def test_init_is_deterministic():
    a = init_layer((3, 4), (5, 2), "tanh", np.random.default_rng(7))
    b = init_layer((3, 4), (5, 2), "tanh", np.random.default_rng(7))
    for p, q in zip(a.params(), b.params()):
        assert p.tobytes() == q.tobytes()


def test_init_bias_zero_and_bounds(rng):
    layer = init_layer((3, 40), (5, 20), rng=rng)
    assert not np.any(layer.bias)
    for u, (i, j) in zip(layer.weights, [(3, 5), (40, 20)]):
        assert u.shape == (j, i)
        assert np.max(np.abs(u)) <= math.sqrt(6 / (i + j))


def test_init_weights_centered(rng):
    layer = init_layer((400,), (250,), rng=rng)
    u = layer.weights[0].ravel()
    assert u.size == 100_000
    s = math.sqrt(6 / 650)
    std_err = (2 * s / math.sqrt(12)) / math.sqrt(u.size)
    assert abs(u.mean()) <= 3 * std_err
