import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from atlseg.tensor import (
    ConfigurationError,
    ShapeError,
    Tensor,
    backward,
    conv2d,
    conv_transpose2d,
    gelu,
    grad_check,
    grad_check_many,
    layer_norm,
    matmul,
    resize_bilinear,
    sigmoid,
    softmax,
    softplus,
    topological_order,
)
from atlseg.tensor import ops


def rand(rng, *shape, lo=-2.0, hi=2.0, grad=False):
    return Tensor(rng.uniform(lo, hi, size=shape), requires_grad=grad)


# -- matmul ------------------------------------------------------------------

def test_matmul_identity():
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(matmul(Tensor(np.eye(2)), a).data, a.data)


def test_matmul_hand_product():
    out = matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[5.0, 6.0], [7.0, 8.0]]))
    np.testing.assert_array_equal(out.data, [[19.0, 22.0], [43.0, 50.0]])


def test_matmul_zero_annihilates():
    rng = np.random.default_rng(0)
    out = matmul(Tensor(np.zeros((3, 4))), rand(rng, 4, 5))
    assert np.all(out.data == 0.0)


def test_matmul_mismatch_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 5\)"):
        matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 5))))


def test_matmul_batched_broadcast_grad():
    rng = np.random.default_rng(1)
    x = rand(rng, 2, 3, 4)
    w = rand(rng, 4, 5)
    r = Tensor(rng.normal(size=(2, 3, 5)))
    assert grad_check_many(lambda: (matmul(x, w) * r).sum(), [x, w]) < 1e-7


# -- gelu --------------------------------------------------------------------

def test_gelu_anchor_values():
    out = gelu(Tensor([0.0, 1.0, 10.0])).data
    assert out[0] == 0.0
    phi1 = float(mpmath.mpf(1) * mpmath.ncdf(1))
    assert abs(out[1] - phi1) < 1e-12
    assert abs(out[1] - 0.841345) < 1e-5
    assert abs(out[2] - 10.0) < 1e-6


def test_gelu_matches_mpmath_on_grid():
    xs = np.linspace(-6, 6, 49)
    ours = gelu(Tensor(xs)).data
    ref = [float(mpmath.mpf(x) * mpmath.ncdf(x)) for x in xs]
    np.testing.assert_allclose(ours, ref, rtol=0, atol=1e-14)


def test_gelu_gradcheck():
    rng = np.random.default_rng(2)
    x = rand(rng, 8)
    assert grad_check(lambda t: gelu(t).sum(), x) < 1e-6


# -- layer_norm --------------------------------------------------------------

def test_layer_norm_constant_row_is_zero():
    out = layer_norm(Tensor(np.full((2, 5), 3.0)), Tensor(np.ones(5)), Tensor(np.zeros(5)))
    assert np.all(out.data == 0.0)


def test_layer_norm_two_element_row():
    out = layer_norm(Tensor([[1.0, 3.0]]), Tensor(np.ones(2)), Tensor(np.zeros(2)), eps=1e-15)
    np.testing.assert_allclose(out.data, [[-1.0, 1.0]], atol=1e-12)


def test_layer_norm_affine_override():
    rng = np.random.default_rng(3)
    out = layer_norm(rand(rng, 3, 6), Tensor(np.zeros(6)), Tensor(np.full(6, 5.0)))
    assert np.all(out.data == 5.0)


def test_layer_norm_gradcheck():
    rng = np.random.default_rng(4)
    x, g, b = rand(rng, 3, 7), rand(rng, 7), rand(rng, 7)
    assert grad_check_many(lambda: layer_norm(x, g, b).sum(), [x, g, b]) < 1e-5


def test_layer_norm_rejects_wrong_affine_shape():
    with pytest.raises(ShapeError):
        layer_norm(Tensor(np.ones((2, 4))), Tensor(np.ones(3)), Tensor(np.zeros(3)))


# -- softmax -----------------------------------------------------------------

def test_softmax_uniform_and_ln2():
    np.testing.assert_allclose(softmax(Tensor([[2.0, 2.0, 2.0]])).data, [[1 / 3] * 3], atol=1e-15)
    np.testing.assert_allclose(softmax(Tensor([[0.0, math.log(2.0)]])).data, [[1 / 3, 2 / 3]], atol=1e-15)


def test_softmax_shift_invariance_and_stability():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(4, 6))
    a = softmax(Tensor(x)).data
    b = softmax(Tensor(x + 1000.0)).data
    np.testing.assert_allclose(a, b, atol=1e-14)
    assert np.all(np.isfinite(b))


# -- conv2d ------------------------------------------------------------------

def test_conv2d_identity_kernel():
    rng = np.random.default_rng(6)
    x = rand(rng, 2, 1, 5, 5)
    out = conv2d(x, Tensor(np.ones((1, 1, 1, 1))))
    np.testing.assert_array_equal(out.data, x.data)


def test_conv2d_ones_overlap_counts():
    out = conv2d(Tensor(np.ones((1, 1, 4, 4))), Tensor(np.ones((1, 1, 3, 3))), padding=1).data[0, 0]
    expected = np.array([[4, 6, 6, 4], [6, 9, 9, 6], [6, 9, 9, 6], [4, 6, 6, 4]], dtype=float)
    np.testing.assert_array_equal(out, expected)


def test_conv2d_zero_input():
    rng = np.random.default_rng(7)
    out = conv2d(Tensor(np.zeros((1, 2, 6, 6))), rand(rng, 3, 2, 3, 3), padding=1)
    assert np.all(out.data == 0.0)


def test_conv2d_matches_direct_loop():
    rng = np.random.default_rng(8)
    x = rng.normal(size=(2, 3, 7, 7))
    k = rng.normal(size=(4, 3, 3, 3))
    ours = conv2d(Tensor(x), Tensor(k), stride=2, padding=1).data
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    ref = np.zeros((2, 4, 4, 4))
    for b in range(2):
        for o in range(4):
            for i in range(4):
                for j in range(4):
                    ref[b, o, i, j] = np.sum(xp[b, :, 2 * i:2 * i + 3, 2 * j:2 * j + 3] * k[o])
    np.testing.assert_allclose(ours, ref, atol=1e-12)


def test_conv2d_non_integral_output_rejected():
    with pytest.raises(ConfigurationError):
        conv2d(Tensor(np.ones((1, 1, 5, 5))), Tensor(np.ones((1, 1, 2, 2))), stride=2)


def test_conv2d_gradcheck():
    rng = np.random.default_rng(9)
    x, k, b = rand(rng, 2, 2, 5, 5), rand(rng, 3, 2, 3, 3), rand(rng, 3)
    r = Tensor(rng.normal(size=(2, 3, 5, 5)))
    assert grad_check_many(lambda: (conv2d(x, k, b, padding=1) * r).sum(), [x, k, b]) < 1e-6


def test_conv_transpose_is_adjoint_of_strided_conv():
    rng = np.random.default_rng(10)
    x = rng.normal(size=(2, 3, 4, 4))
    k = rng.normal(size=(3, 5, 2, 2))  # [C_in, C_out, kh, kw]
    y = rng.normal(size=(2, 5, 8, 8))
    up = conv_transpose2d(Tensor(x), Tensor(k), stride=2).data
    down = conv2d(Tensor(y), Tensor(k), stride=2).data  # [O=C_in, C=C_out] view of the same kernel
    assert abs(np.sum(up * y) - np.sum(x * down)) < 1e-10


def test_conv_transpose_gradcheck():
    rng = np.random.default_rng(11)
    x, k, b = rand(rng, 1, 2, 3, 3), rand(rng, 2, 3, 2, 2), rand(rng, 3)
    r = Tensor(rng.normal(size=(1, 3, 6, 6)))
    assert grad_check_many(lambda: (conv_transpose2d(x, k, b) * r).sum(), [x, k, b]) < 1e-6


# -- resize, sigmoid, softplus ----------------------------------------------

def test_resize_bilinear_constant_preserved_and_rows_sum_to_one():
    out = resize_bilinear(Tensor(np.full((1, 1, 4, 4), 2.5)), (8, 8)).data
    np.testing.assert_allclose(out, 2.5, atol=1e-15)
    m = ops.bilinear_matrix(5, 13)
    np.testing.assert_allclose(m.sum(axis=1), 1.0, atol=1e-15)


def test_resize_bilinear_doubling_hand_values():
    # half-pixel centres: out[1] samples src 0.25, out[2] samples src 0.75
    out = resize_bilinear(Tensor(np.array([[0.0, 4.0]])), (1, 4)).data
    np.testing.assert_allclose(out, [[0.0, 1.0, 3.0, 4.0]], atol=1e-15)


def test_sigmoid_softplus_extremes():
    s = sigmoid(Tensor([-800.0, 0.0, 800.0])).data
    np.testing.assert_array_equal(s, [0.0, 0.5, 1.0])
    sp = softplus(Tensor([-800.0, 0.0, 800.0])).data
    np.testing.assert_allclose(sp, [0.0, math.log(2.0), 800.0])


# -- backward contract -------------------------------------------------------

def test_backward_linear_sum():
    x = Tensor(np.arange(5.0), requires_grad=True)
    backward(x.sum())
    np.testing.assert_array_equal(x.grad, np.ones(5))


def test_backward_square():
    x = Tensor([1.0, 2.0], requires_grad=True)
    backward((x * x).sum())
    np.testing.assert_array_equal(x.grad, [2.0, 4.0])


def test_backward_leaves_frozen_tensor_untouched():
    rng = np.random.default_rng(12)
    x = rand(rng, 3, 4, grad=True)
    w = rand(rng, 4, 2)
    backward(matmul(x, w).sum())
    assert w.grad is None
    assert x.grad is not None


def test_backward_rejects_non_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError, match="scalar"):
        backward(x * 2.0)


def test_backward_diamond_visits_each_node_once():
    x = Tensor([3.0], requires_grad=True)
    y = x * 2.0
    z = (y * y + y).sum()  # dz/dx = (2y + 1) * 2 = 26
    order = topological_order(z)
    assert len({id(t) for t in order}) == len(order)
    pos = {id(t): i for i, t in enumerate(order)}
    for t in order:
        if t.node is not None:
            for inp in t.node.inputs:
                if inp.requires_grad:
                    assert pos[id(inp)] < pos[id(t)]
    backward(z)
    np.testing.assert_array_equal(x.grad, [26.0])


def test_grad_check_examples_from_contract():
    rng = np.random.default_rng(13)
    x = rand(rng, 8)
    assert grad_check(lambda t: gelu(t).sum(), x) < 1e-6
    w = Tensor(rng.uniform(-1, 1, size=(4, 3)))
    xm = Tensor(rng.uniform(-1, 1, size=(2, 4)))
    assert grad_check(lambda t: matmul(t, w).sum(), xm, h=1e-4) < 1e-10
    gamma, beta = Tensor(rng.uniform(0.5, 1.5, 6)), Tensor(rng.uniform(-1, 1, 6))
    xl = rand(rng, 3, 6)
    assert grad_check(lambda t: layer_norm(t, gamma, beta).sum(), xl) < 1e-5


def test_grad_check_rejects_bad_step():
    with pytest.raises(ValueError):
        grad_check(lambda t: t.sum(), Tensor(np.ones(2)), h=1e-2)


def test_grad_check_detects_corrupted_gelu(monkeypatch):
    monkeypatch.setattr(ops, "_gelu_grad", lambda x: 0.9 * ops.erf(x))
    rng = np.random.default_rng(14)
    assert grad_check(lambda t: gelu(t).sum(), rand(rng, 8)) > 1e-3


# -- properties --------------------------------------------------------------

OP_FAMILIES = {
    "gelu": lambda rng: ([rand(rng, 3, 4)], lambda xs: gelu(xs[0])),
    "softmax": lambda rng: ([rand(rng, 3, 5)], lambda xs: softmax(xs[0])),
    "layer_norm": lambda rng: ([rand(rng, 3, 5), rand(rng, 5), rand(rng, 5)],
                               lambda xs: layer_norm(*xs)),
    "matmul": lambda rng: ([rand(rng, 2, 3, 4), rand(rng, 4, 2)], lambda xs: matmul(*xs)),
    "sigmoid": lambda rng: ([rand(rng, 6)], lambda xs: sigmoid(xs[0])),
    "softplus": lambda rng: ([rand(rng, 6)], lambda xs: softplus(xs[0])),
    "conv2d": lambda rng: ([rand(rng, 1, 2, 4, 4), rand(rng, 2, 2, 3, 3)],
                           lambda xs: conv2d(*xs, padding=1)),
    "resize": lambda rng: ([rand(rng, 1, 1, 3, 3)], lambda xs: resize_bilinear(xs[0], (6, 6))),
}


@pytest.mark.parametrize("family", sorted(OP_FAMILIES))
@pytest.mark.parametrize("seed", range(10))
def test_every_op_gradcheck_over_seeds(family, seed):
    rng = np.random.default_rng(100 + seed)
    inputs, fn = OP_FAMILIES[family](rng)
    probe = fn(inputs)
    weights = Tensor(rng.normal(size=probe.shape))
    assert grad_check_many(lambda: (fn(inputs) * weights).sum(), inputs) < 1e-5


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.integers(1, 9), st.integers(0, 2**31 - 1))
def test_softmax_rows_sum_and_layer_norm_centred(rows, cols, seed):
    rng = np.random.default_rng(seed)
    x = Tensor(rng.normal(scale=5.0, size=(rows, cols)))
    s = softmax(x).data
    assert np.all(np.abs(s.sum(axis=-1) - 1.0) < 1e-12)
    ln = layer_norm(x, Tensor(np.ones(cols)), Tensor(np.zeros(cols))).data
    assert np.all(np.abs(ln.mean(axis=-1)) < 1e-10)


def test_forward_is_deterministic():
    def run():
        rng = np.random.default_rng(15)
        x, k = rand(rng, 2, 3, 6, 6), rand(rng, 4, 3, 3, 3)
        return gelu(conv2d(x, k, padding=1)).data

    assert run().tobytes() == run().tobytes()
