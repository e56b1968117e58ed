import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ictus import autodiff as ad
from ictus.gradcheck import grad_check


def test_softmax_of_zeros_is_uniform():
    out = ad.softmax(ad.constant(np.zeros(4)), axis=-1)
    np.testing.assert_array_equal(out.data, np.full(4, 0.25))


def test_layer_norm_constant_vector_is_zero_before_affine():
    x = ad.constant(np.full((3, 5), 2.7))
    out = ad.layer_norm(x, gamma=ad.constant(np.ones(5)), beta=ad.constant(np.zeros(5)))
    np.testing.assert_allclose(out.data, 0.0, atol=1e-12)


def test_conv1d_hand_example():
    # kernel [1, -1] convolved (true convolution) with [1, 2, 4, 8]
    x = ad.constant(np.array([1.0, 2.0, 4.0, 8.0]).reshape(1, 4, 1))
    w = ad.constant(np.array([1.0, -1.0]).reshape(2, 1, 1))
    valid = ad.conv1d(x, w, mode="valid")
    np.testing.assert_array_equal(valid.data.ravel(), [1.0, 2.0, 4.0])
    same = ad.conv1d(x, w, mode="same")
    np.testing.assert_array_equal(same.data.ravel(), [1.0, 1.0, 2.0, 4.0])


def test_mse_gradient_closed_form():
    x = ad.leaf(np.array([1.0, 2.0]))
    loss = ad.mse(x, ad.constant(np.zeros(2)))
    ad.backward(loss)
    np.testing.assert_allclose(x.grad, [1.0, 2.0])  # 2(x - y)/N with N=2


def test_sigmoid_gradient_at_zero():
    x = ad.leaf(np.zeros((1,)))
    ad.backward(ad.vsum(ad.sigmoid(x)))
    np.testing.assert_allclose(x.grad, [0.25])


def test_relu_zero_preactivation_uses_zero_subgradient():
    x = ad.leaf(np.array([-1.0, 0.0, 2.0]))
    ad.backward(ad.vsum(ad.relu(x)))
    np.testing.assert_array_equal(x.grad, [0.0, 0.0, 1.0])


def test_non_scalar_loss_rejected():
    x = ad.leaf(np.ones(3))
    with pytest.raises(ad.ShapeError):
        ad.backward(ad.mul(x, 2.0))


def test_shape_mismatch_names_operation():
    a = ad.constant(np.ones((2, 3)))
    b = ad.constant(np.ones((4, 2)))
    with pytest.raises(ad.ShapeError, match="matmul"):
        ad.matmul(a, b)
    with pytest.raises(ad.ShapeError, match="conv1d"):
        ad.conv1d(ad.constant(np.ones((2, 5, 3))), ad.constant(np.ones((2, 4, 6))))


def test_forward_is_pure():
    rng = np.random.default_rng(0)
    x = ad.constant(rng.normal(size=(4, 6)))
    w = ad.constant(rng.normal(size=(6, 2)))

    def run():
        return ad.softmax(ad.matmul(ad.relu(x), w), axis=-1).data

    first = run()
    for _ in range(3):
        assert np.array_equal(run(), first)


def _probe_scalar(y, rng):
    r = ad.constant(rng.normal(size=y.shape))
    return ad.vsum(ad.mul(y, r))


PRIMITIVES = {
    "add": lambda x, y, rng: ad.add(x, y),
    "sub": lambda x, y, rng: ad.sub(x, y),
    "mul": lambda x, y, rng: ad.mul(x, y),
    "div": lambda x, y, rng: ad.div(x, ad.add(ad.square(y), 0.5)),
    "matmul": lambda x, y, rng: ad.matmul(x, ad.swapaxes(y, -1, -2)),
    "relu": lambda x, y, rng: ad.relu(x),
    "sigmoid": lambda x, y, rng: ad.sigmoid(x),
    "softmax": lambda x, y, rng: ad.softmax(x, axis=-1),
    "square": lambda x, y, rng: ad.square(x),
    "sqrt": lambda x, y, rng: ad.sqrt(ad.add(ad.square(x), 0.1)),
    "sum": lambda x, y, rng: ad.vsum(x, axis=0),
    "mean": lambda x, y, rng: ad.vmean(x, axis=-1),
    "swapaxes": lambda x, y, rng: ad.swapaxes(x, 0, 1),
    "reshape": lambda x, y, rng: ad.reshape(x, (-1,)),
    "broadcast_to": lambda x, y, rng: ad.broadcast_to(ad.vsum(x, axis=0, keepdims=True), x.shape),
    "concat": lambda x, y, rng: ad.concat([x, y], axis=0),
    "stack": lambda x, y, rng: ad.stack([x, y], axis=1),
    "getitem": lambda x, y, rng: x[1:, :],
    "layer_norm": lambda x, y, rng: ad.layer_norm(x, ad.constant(np.ones(x.shape[-1])), ad.constant(np.zeros(x.shape[-1]))),
    "l2_norm": lambda x, y, rng: ad.l2_norm(x, axis=-1),
    "mse": lambda x, y, rng: ad.mse(x, y),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_gradients_match_finite_differences(name):
    rng = np.random.default_rng(abs(hash(name)) % 2**32)
    x = ad.leaf(rng.normal(size=(3, 4)) + 0.1, name="x")
    y = ad.leaf(rng.normal(size=(3, 4)) + 0.1, name="y")
    probe_rng = np.random.default_rng(99)
    r = None

    def loss_fn():
        nonlocal r
        out = PRIMITIVES[name](x, y, probe_rng)
        if r is None:
            r = np.random.default_rng(7).normal(size=out.shape)
        return ad.vsum(ad.mul(out, ad.constant(r)))

    report = grad_check(loss_fn, {"x": x, "y": y})
    assert report.max_rel_error <= 1e-4, f"{name}: {report}"


def test_conv1d_gradients_match_finite_differences():
    rng = np.random.default_rng(5)
    x = ad.leaf(rng.normal(size=(2, 6, 3)), name="x")
    w = ad.leaf(rng.normal(size=(2, 3, 4)), name="w")
    b = ad.leaf(rng.normal(size=4), name="b")
    r = np.random.default_rng(8).normal(size=(2, 6, 4))

    def loss_fn():
        return ad.vsum(ad.mul(ad.conv1d(x, w, b), ad.constant(r)))

    report = grad_check(loss_fn, {"x": x, "w": w, "b": b})
    assert report.max_rel_error <= 1e-4, report


def test_pool_gradients_match_finite_differences():
    rng = np.random.default_rng(6)
    x = ad.leaf(rng.normal(size=(2, 5, 7)), name="x")
    r = np.random.default_rng(9).normal(size=(2, 3, 3))

    def loss_fn():
        return ad.vsum(ad.mul(ad.adaptive_avg_pool2d(x, 3), ad.constant(r)))

    report = grad_check(loss_fn, {"x": x})
    assert report.max_rel_error <= 1e-4, report


@settings(max_examples=40, deadline=None)
@given(
    rows=st.integers(1, 5),
    cols=st.integers(1, 6),
    seed=st.integers(0, 2**31 - 1),
    scale=st.floats(0.1, 50.0),
)
def test_softmax_rows_are_distributions(rows, cols, seed, scale):
    rng = np.random.default_rng(seed)
    out = ad.softmax(ad.constant(scale * rng.normal(size=(rows, cols))), axis=-1).data
    assert (out >= 0).all()
    np.testing.assert_allclose(out.sum(axis=-1), 1.0, atol=1e-9)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_random_composite_gradients(seed):
    rng = np.random.default_rng(seed)
    x = ad.leaf(rng.normal(size=(2, 3)), name="x")
    w = ad.leaf(rng.normal(size=(3, 3)), name="w")

    def loss_fn():
        h = ad.relu(ad.matmul(x, w))
        s = ad.softmax(ad.add(h, 0.3), axis=-1)
        return ad.add(ad.mse(s, ad.constant(np.full((2, 3), 1 / 3))), ad.vmean(ad.sigmoid(h)))

    report = grad_check(loss_fn, {"x": x, "w": w})
    assert report.max_rel_error <= 1e-4, report


def test_second_order_unsupported_ops_fail_explicitly():
    x = ad.leaf(np.ones((1, 4, 1)))
    k = ad.leaf(np.ones((2, 1, 1)))
    out = ad.vsum(ad.conv1d(x, k))
    with pytest.raises(ad.SecondOrderError, match="conv1d"):
        ad.grad(out, [x], create_graph=True)
    y = ad.leaf(np.ones((2, 2)))
    out2 = ad.vsum(ad.adaptive_avg_pool2d(ad.concat([y, y], axis=0), 1))
    with pytest.raises(ad.SecondOrderError):
        ad.grad(out2, [y], create_graph=True)


def test_linear_map_input_gradient_is_weight():
    # D(z) = w . z: gradient w.r.t. z equals w everywhere, any z
    rng = np.random.default_rng(3)
    w = ad.leaf(rng.normal(size=(5, 1)), name="w")
    z = ad.leaf(rng.normal(size=(4, 5)), name="z")
    out = ad.vsum(ad.matmul(z, w))
    (gz,) = ad.grad(out, [z], create_graph=True)
    np.testing.assert_allclose(gz.data, np.broadcast_to(w.data.T, (4, 5)))


def test_double_backprop_matches_finite_differences_of_penalty():
    rng = np.random.default_rng(12)
    w = ad.leaf(rng.normal(size=(4, 1)) * 1.5, name="w")
    z0 = rng.normal(size=(3, 4))

    def penalty():
        z = ad.leaf(z0.copy(), name="z")
        out = ad.vsum(ad.sigmoid(ad.matmul(z, w)))
        (gz,) = ad.grad(out, [z], create_graph=True)
        norms = ad.sqrt(ad.vsum(ad.square(gz), axis=1))
        return ad.vmean(ad.square(ad.sub(norms, 1.0)))

    report = grad_check(penalty, {"w": w}, h=1e-5)
    assert report.max_rel_error <= 1e-3, report


def test_backward_accumulates_over_reuses():
    x = ad.leaf(np.array([2.0]))
    y = ad.add(ad.mul(x, x), ad.mul(3.0, x))  # x^2 + 3x -> dy/dx = 2x + 3
    ad.backward(ad.vsum(y))
    np.testing.assert_allclose(x.grad, [7.0])
