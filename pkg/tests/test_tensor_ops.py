import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lssfnet import ops
from lssfnet.gradcheck import grad_error, weighted_sum
from lssfnet.tensor import Tape, Tensor, no_grad

from conftest import naive_conv2d, t64


# -- conv2d ----------------------------------------------------------------------

def test_conv_ones_center_edge_corner():
    x = Tensor(np.ones((1, 3, 3, 1)))
    k = Tensor(np.ones((3, 3, 1, 1)))
    y = ops.conv2d(x, k, Tensor(np.zeros(1))).data[0, :, :, 0]
    np.testing.assert_array_equal(y, [[4, 6, 4], [6, 9, 6], [4, 6, 4]])


def test_conv_zero_kernel_gives_bias(rng):
    x = Tensor(rng.normal(size=(2, 5, 5, 3)))
    y = ops.conv2d(x, Tensor(np.zeros((3, 3, 3, 4))), Tensor(np.full(4, 2.5)))
    assert np.all(y.data == 2.5)


def test_conv_identity_1x1_bit_exact(rng):
    x = Tensor(rng.normal(size=(2, 6, 6, 5)).astype(np.float32))
    k = Tensor(np.eye(5, dtype=np.float32).reshape(1, 1, 5, 5))
    y = ops.conv2d(x, k, Tensor(np.zeros(5, np.float32)))
    assert np.array_equal(y.data, x.data)


@pytest.mark.parametrize("stride,ksize,size", [(1, 3, 5), (2, 3, 6), (1, 5, 4), (2, 1, 5), (1, 1, 3)])
def test_conv_matches_naive_oracle(rng, stride, ksize, size):
    x = rng.normal(size=(2, size, size, 3))
    k = rng.normal(size=(ksize, ksize, 3, 4))
    b = rng.normal(size=4)
    y = ops.conv2d(t64(x), t64(k), t64(b), stride=stride)
    np.testing.assert_allclose(y.data, naive_conv2d(x, k, b, stride), rtol=1e-12, atol=1e-12)


def test_conv_valid_padding(rng):
    x = rng.normal(size=(1, 5, 5, 2))
    k = rng.normal(size=(3, 3, 2, 1))
    y = ops.conv2d(t64(x), t64(k), None, padding="valid")
    assert y.shape == (1, 3, 3, 1)
    np.testing.assert_allclose(y.data[0, 1, 1, 0], np.sum(x[0, 1:4, 1:4] * k[..., 0]))


def test_conv_errors():
    x = Tensor(np.zeros((1, 4, 4, 2)))
    with pytest.raises(ValueError):
        ops.conv2d(x, Tensor(np.zeros((3, 3, 3, 1))))
    with pytest.raises(ValueError):
        ops.conv2d(x, Tensor(np.zeros((3, 3, 2, 1))), stride=0)
    with pytest.raises(ValueError):
        ops.conv2d(x, Tensor(np.zeros((2, 2, 2, 1))))


# -- batch norm -----------------------------------------------------------------

def _bn_params(c, gamma=1.0, beta=0.0):
    return (Tensor(np.full(c, gamma)), Tensor(np.full(c, beta)), Tensor(np.zeros(c)), Tensor(np.ones(c)))


def test_bn_infer_zero_input():
    y = ops.batch_norm(Tensor(np.zeros((1, 2, 2, 3))), *_bn_params(3), mode="infer")
    assert np.all(y.data == 0)


def test_bn_zero_gamma_gives_beta(rng):
    y = ops.batch_norm(Tensor(rng.normal(size=(2, 3, 3, 2))), *_bn_params(2, 0.0, 1.75), mode="train")
    assert np.all(y.data == 1.75)


def test_bn_train_two_values():
    x = Tensor(np.array([1.0, 3.0]).reshape(2, 1, 1, 1), dtype=np.float64)
    gamma, beta, rm, rv = _bn_params(1)
    y = ops.batch_norm(x, gamma, beta, rm, rv, mode="train", eps=1e-12)
    np.testing.assert_allclose(y.data.ravel(), [-1.0, 1.0], atol=1e-9)
    # momentum 0.9 towards the batch statistics (mean 2, biased var 1)
    np.testing.assert_allclose(rm.data, [0.2])
    np.testing.assert_allclose(rv.data, [1.0])


def test_bn_rejects_bad_eps():
    with pytest.raises(ValueError):
        ops.batch_norm(Tensor(np.zeros((1, 1, 1, 1))), *_bn_params(1), mode="infer", eps=0.0)


# -- activations ------------------------------------------------------------------

def test_activations_points():
    np.testing.assert_array_equal(ops.relu(Tensor([-2.0, 3.0])).data, [0.0, 3.0])
    assert ops.sigmoid(Tensor([0.0])).data[0] == 0.5
    assert ops.gelu(Tensor([0.0])).data[0] == 0.0


def test_sigmoid_strictly_inside_unit_interval():
    y = ops.sigmoid(Tensor(np.array([-1e4, -50, 0, 50, 1e4], dtype=np.float32)))
    assert np.all(y.data > 0) and np.all(y.data < 1)


def test_gelu_matches_erf_formula():
    from math import erf, sqrt
    xs = np.linspace(-4, 4, 17)
    expected = [0.5 * v * (1 + erf(v / sqrt(2))) for v in xs]
    np.testing.assert_allclose(ops.gelu(t64(xs)).data, expected, rtol=1e-12, atol=1e-15)


# -- pooling / resampling ---------------------------------------------------------------

def test_maxpool_examples():
    assert ops.maxpool2(Tensor(np.array([[1.0, 2], [3, 4]]).reshape(1, 2, 2, 1))).data.item() == 4
    ramp = Tensor(np.arange(16.0).reshape(1, 4, 4, 1))
    np.testing.assert_array_equal(ops.maxpool2(ramp).data[0, :, :, 0], [[5, 7], [13, 15]])
    const = ops.maxpool2(Tensor(np.full((1, 4, 4, 2), 3.0)))
    assert np.all(const.data == 3.0)


def test_maxpool_tie_routes_to_first():
    x = t64(np.ones((1, 2, 2, 1)), grad=True)
    ops.maxpool2(x).sum().backward()
    np.testing.assert_array_equal(x.grad[0, :, :, 0], [[1, 0], [0, 0]])


def test_maxpool_odd_dims_rejected():
    with pytest.raises(ValueError):
        ops.maxpool2(Tensor(np.zeros((1, 3, 4, 1))))


def test_upsample_examples():
    assert np.all(ops.upsample2(Tensor(np.ones((1, 1, 1, 1)))).data == 1)
    y = ops.upsample2(Tensor(np.array([[1.0, 2], [3, 4]]).reshape(1, 2, 2, 1))).data[0, :, :, 0]
    src = np.array([[1.0, 2], [3, 4]])
    oracle = np.array([[src[i // 2, j // 2] for j in range(4)] for i in range(4)])
    np.testing.assert_array_equal(y, oracle)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 2), st.integers(1, 4), st.integers(1, 4), st.integers(1, 3)),
              elements=st.floats(-1e6, 1e6)))
def test_maxpool_after_upsample_is_identity(x):
    assert np.array_equal(ops.maxpool2(ops.upsample2(t64(x))).data, x)


# -- misc primitives ----------------------------------------------------------------

def test_softmax_constant_row():
    np.testing.assert_allclose(ops.softmax(Tensor(np.full((1, 4), 3.0))).data, [[0.25] * 4])


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 6)), elements=st.floats(-500, 500)),
       st.sampled_from([0, 1, -1]))
def test_softmax_slices_sum_to_one(x, axis):
    y = ops.softmax(t64(x), axis=axis).data
    assert np.all(y >= 0)
    np.testing.assert_allclose(y.sum(axis=axis), 1.0, atol=1e-6)


def test_dropout_infer_is_identity(rng):
    x = Tensor(rng.normal(size=(3, 4)))
    assert ops.dropout(x, 0.5, "infer") is x
    with pytest.raises(ValueError):
        ops.dropout(x, 1.0, "infer")


def test_dropout_train_scales_kept_units(rng):
    x = Tensor(np.ones((200, 50)))
    y = ops.dropout(x, 0.25, "train", rng).data
    assert set(np.unique(y)) <= {0.0, 1 / 0.75}
    assert abs((y == 0).mean() - 0.25) < 0.02


def test_matmul_example():
    y = ops.matmul(Tensor([[1.0, 2], [3, 4]]), Tensor([[1.0], [1]]))
    np.testing.assert_array_equal(y.data, [[3], [7]])
    with pytest.raises(ValueError):
        ops.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_layer_norm_normalises_channels(rng):
    x = t64(rng.normal(3.0, 2.0, size=(2, 3, 3, 8)))
    y = ops.layer_norm(x, t64(np.ones(8)), t64(np.zeros(8))).data
    np.testing.assert_allclose(y.mean(axis=-1), 0, atol=1e-12)
    np.testing.assert_allclose(y.var(axis=-1), 1, atol=1e-5)


def test_concat_and_split_roundtrip(rng):
    a, b = t64(rng.normal(size=(1, 2, 2, 3))), t64(rng.normal(size=(1, 2, 2, 5)))
    c = ops.concat([a, b], axis=-1)
    assert c.shape == (1, 2, 2, 8)
    p, q = ops.split(c, [3, 5])
    assert np.array_equal(p.data, a.data) and np.array_equal(q.data, b.data)
    with pytest.raises(ValueError):
        ops.concat([a, t64(np.zeros((1, 3, 2, 1)))])


def test_global_avg_pool(rng):
    x = rng.normal(size=(2, 4, 4, 3))
    np.testing.assert_allclose(ops.global_avg_pool(t64(x)).data[:, 0, 0], x.mean(axis=(1, 2)))


def test_depthwise_matches_naive(rng):
    x = rng.normal(size=(1, 5, 5, 3))
    k = rng.normal(size=(3, 3, 3))
    y = ops.depthwise_conv2d(t64(x), t64(k)).data
    for c in range(3):
        full = k[:, :, c].reshape(3, 3, 1, 1)
        np.testing.assert_allclose(y[..., c], naive_conv2d(x[..., c:c + 1], full, [0.0])[..., 0], atol=1e-12)


# -- autodiff ----------------------------------------------------------------------

def test_backward_sum_and_square():
    x = t64(np.ones((2, 2)), grad=True)
    x.sum().backward()
    np.testing.assert_array_equal(x.grad, np.ones((2, 2)))
    y = t64([1.0, 2.0], grad=True)
    (y * y).sum().backward()
    np.testing.assert_array_equal(y.grad, [2.0, 4.0])


def test_backward_accumulates_until_reset():
    x = t64([1.0, 2.0], grad=True)
    x.sum().backward()
    x.sum().backward()
    np.testing.assert_array_equal(x.grad, [2.0, 2.0])
    x.zero_grad()
    assert x.grad is None


def test_backward_rejects_non_scalar():
    with pytest.raises(ValueError):
        t64(np.ones(3), grad=True).backward()


def test_tape_order_and_single_visit():
    x = t64([1.0, 2.0], grad=True)
    h = x * x
    loss = (h + h).sum()
    tape = Tape.record(loss)
    pos = {id(n): i for i, n in enumerate(tape.nodes)}
    assert len(pos) == len(tape.nodes) == 4
    for node in tape.nodes:
        for p in node._parents:
            assert pos[id(p)] < pos[id(node)]
    loss.backward()
    np.testing.assert_array_equal(x.grad, [4.0, 8.0])


def test_no_grad_skips_recording():
    x = t64([1.0], grad=True)
    with no_grad():
        y = x * 2
    assert not y.requires_grad


def test_nonfinite_is_an_error():
    with pytest.raises(FloatingPointError):
        ops.log(t64([0.0]))


PRIMITIVES = {
    "conv2d": lambda r: ((r.normal(size=(2, 5, 5, 3)), r.normal(size=(3, 3, 3, 2)), r.normal(size=2)),
                         lambda x, k, b: ops.conv2d(x, k, b)),
    "conv2d_stride2": lambda r: ((r.normal(size=(1, 6, 6, 2)), r.normal(size=(3, 3, 2, 3)), r.normal(size=3)),
                                 lambda x, k, b: ops.conv2d(x, k, b, stride=2)),
    "depthwise": lambda r: ((r.normal(size=(1, 5, 5, 3)), r.normal(size=(5, 5, 3))), ops.depthwise_conv2d),
    "bn_train": lambda r: ((r.normal(size=(2, 3, 3, 4)), r.normal(size=4), r.normal(size=4)),
                           lambda x, g, b: ops.batch_norm(x, g, b, Tensor(np.zeros(4)), Tensor(np.ones(4)), "train")),
    "bn_infer": lambda r: ((r.normal(size=(2, 3, 3, 4)), r.normal(size=4), r.normal(size=4)),
                           lambda x, g, b: ops.batch_norm(x, g, b, Tensor(np.full(4, 0.3)), Tensor(np.full(4, 2.0)), "infer")),
    "layer_norm": lambda r: ((r.normal(size=(2, 3, 3, 4)), r.normal(size=4), r.normal(size=4)), ops.layer_norm),
    "gelu": lambda r: ((r.normal(size=(3, 7)),), ops.gelu),
    "sigmoid": lambda r: ((r.normal(size=(3, 7)),), ops.sigmoid),
    "relu": lambda r: ((r.normal(size=(3, 7)),), ops.relu),
    "softmax": lambda r: ((r.normal(size=(2, 3, 5)),), lambda x: ops.softmax(x, axis=-1)),
    "matmul": lambda r: ((r.normal(size=(2, 3, 4)), r.normal(size=(4, 5))), ops.matmul),
    "maxpool2": lambda r: ((r.normal(size=(2, 4, 4, 3)),), ops.maxpool2),
    "upsample2": lambda r: ((r.normal(size=(1, 2, 3, 2)),), ops.upsample2),
    "global_avg_pool": lambda r: ((r.normal(size=(2, 3, 3, 2)),), ops.global_avg_pool),
    "concat": lambda r: ((r.normal(size=(1, 2, 2, 3)), r.normal(size=(1, 2, 2, 2))),
                         lambda a, b: ops.concat([a, b], axis=-1)),
    "div_log": lambda r: ((r.uniform(0.5, 2, size=(3, 4)), r.uniform(0.5, 2, size=(4,))),
                          lambda a, b: ops.log(a / b)),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_gradients(name):
    r = np.random.default_rng(7)
    arrays_, fn = PRIMITIVES[name](r)
    tensors = {f"in{i}": t64(a) for i, a in enumerate(arrays_)}
    readout = np.random.default_rng(8)
    w_state = readout.bit_generator.state

    def loss():
        readout.bit_generator.state = w_state
        return weighted_sum(fn(*tensors.values()), readout)

    errs = grad_error(loss, tensors, max_coords=None)
    assert max(errs.values()) < 1e-6, errs
