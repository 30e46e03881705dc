import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from stegattn import numerics as nx
from stegattn.errors import ShapeError, UsageError
from stegattn.numerics import ConvParams, DenseParams, Tensor, gradcheck, kernels


def T(a, grad=False):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=grad)


def conv(x, w, b, pad=(0, 0, 0, 0)):
    return nx.conv2d(T(x), ConvParams(T(w), T(b)), pad).data


# ---------------------------------------------------------------- conv2d

def test_conv_1x1_is_scalar_multiply():
    out = conv(np.ones((1, 1, 3, 3)), np.full((1, 1, 1, 1), 2.0), np.zeros(1))
    np.testing.assert_array_equal(out, np.full((1, 1, 3, 3), 2.0))


def test_conv_2x2_identity_kernel():
    x = np.array([[[[1, 2], [3, 4]]]], dtype=float)
    w = np.array([[[[1, 0], [0, 1]]]], dtype=float)
    assert conv(x, w, np.zeros(1)).shape == (1, 1, 1, 1)
    assert conv(x, w, np.zeros(1))[0, 0, 0, 0] == 5.0


@pytest.mark.parametrize("case", range(20))
def test_conv_matches_loop_oracle(case):
    rng = np.random.default_rng(1000 + case)
    n, cin, cout = rng.integers(1, 3), rng.integers(1, 5), rng.integers(1, 4)
    h, w = rng.integers(5, 9), rng.integers(5, 9)
    k = int(rng.choice([1, 3, 4, 5]))
    pad = tuple(int(v) for v in rng.integers(0, 3, 4))
    x = rng.standard_normal((n, cin, h, w))
    wt = rng.standard_normal((cout, cin, k, k))
    b = rng.standard_normal(cout)
    np.testing.assert_allclose(conv(x, wt, b, pad), oracles.conv2d(x, wt, b, pad), atol=1e-5, rtol=0)


def test_conv_multi_equals_separate_convs():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((2, 3, 7, 6))
    specs = [(3, 4, nx.same_padding(3)), (4, 2, nx.same_padding(4)), (5, 1, nx.same_padding(5))]
    convs = [(ConvParams(T(rng.standard_normal((c, 3, k, k))), T(rng.standard_normal(c))), p)
             for k, c, p in specs]
    fused = nx.conv2d_multi(T(x), convs).data
    parts = [oracles.conv2d(x, cp.weight.data, cp.bias.data, p) for cp, p in convs]
    np.testing.assert_allclose(fused, np.concatenate(parts, axis=1), atol=1e-10)


def test_conv_float32_matches_oracle():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((2, 4, 8, 8)).astype(np.float32)
    w = rng.standard_normal((3, 4, 4, 4)).astype(np.float32)
    b = rng.standard_normal(3).astype(np.float32)
    out = nx.conv2d(Tensor(x), ConvParams(Tensor(w), Tensor(b)), (1, 2, 1, 2))
    assert out.dtype == np.float32
    np.testing.assert_allclose(out.data, oracles.conv2d(x, w, b, (1, 2, 1, 2)), atol=1e-4)


def test_same_padding_keeps_extent():
    assert nx.same_padding(3) == (1, 1, 1, 1)
    assert nx.same_padding(4) == (1, 2, 1, 2)
    assert nx.same_padding(5) == (2, 2, 2, 2)
    assert nx.same_padding(7) == (3, 3, 3, 3)


def test_conv_channel_mismatch_is_shape_error():
    with pytest.raises(ShapeError):
        conv(np.zeros((1, 2, 4, 4)), np.zeros((1, 3, 3, 3)), np.zeros(1))


def test_conv_rejects_non_4d():
    with pytest.raises(ShapeError):
        nx.conv2d(T(np.zeros((2, 4, 4))), ConvParams(T(np.zeros((1, 2, 1, 1))), T(np.zeros(1))))


# ---------------------------------------------------------------- pointwise

def test_relu_examples():
    np.testing.assert_array_equal(nx.relu(T([-1.0, 0.0, 2.0])).data, [0, 0, 2])
    assert not nx.relu(T(-np.abs(np.random.default_rng(0).standard_normal(20)) - 0.1)).data.any()


@given(arrays(np.float64, st.integers(1, 30), elements=st.floats(-1e6, 1e6)))
def test_relu_idempotent(x):
    once = nx.relu(T(x)).data
    np.testing.assert_array_equal(nx.relu(T(once)).data, once)


def test_sigmoid_zero_and_saturation():
    assert nx.sigmoid(T([0.0])).data[0] == 0.5
    for dtype in (np.float32, np.float64):
        out = nx.sigmoid(Tensor(np.array([-50.0, 50.0, -1e4, 1e4], dtype=dtype))).data
        assert np.all(np.isfinite(out)) and np.all(out > 0) and np.all(out < 1)


@given(arrays(np.float64, st.integers(1, 30), elements=st.floats(-30, 30)))
def test_sigmoid_symmetry(x):
    s = nx.sigmoid(T(x)).data
    np.testing.assert_allclose(nx.sigmoid(T(-x)).data, 1 - s, atol=1e-6)


# ---------------------------------------------------------------- channels

def test_concat_50_10_5():
    parts = [T(np.random.default_rng(c).standard_normal((2, c, 4, 4))) for c in (50, 10, 5)]
    out = nx.concat_channels(parts)
    assert out.shape == (2, 65, 4, 4)
    starts = [0, 50, 60, 65]
    for p, a, b in zip(parts, starts, starts[1:]):
        np.testing.assert_array_equal(nx.slice_channels(out, a, b).data, p.data)


def test_concat_single_part_identity():
    x = T(np.random.default_rng(1).standard_normal((1, 3, 2, 2)))
    np.testing.assert_array_equal(nx.concat_channels([x]).data, x.data)


def test_concat_mismatch_is_shape_error():
    with pytest.raises(ShapeError):
        nx.concat_channels([T(np.zeros((1, 2, 4, 4))), T(np.zeros((1, 2, 4, 5)))])


# ---------------------------------------------------------------- pools

def test_global_pool_examples():
    const = T(np.full((1, 2, 3, 3), 0.7))
    for kind in ("avg", "max"):
        np.testing.assert_allclose(nx.global_pool(const, kind).data, 0.7)
    hot = np.zeros((1, 1, 2, 2))
    hot[0, 0, 1, 0] = 8
    assert nx.global_pool(T(hot), "avg").data.item() == 2
    assert nx.global_pool(T(hot), "max").data.item() == 8


def test_channel_pool_examples():
    x = T(np.array([1.0, 3.0]).reshape(1, 2, 1, 1))
    assert nx.channel_pool(x, "avg").data.item() == 2
    assert nx.channel_pool(x, "max").data.item() == 3
    single = T(np.random.default_rng(2).standard_normal((2, 1, 3, 3)))
    for kind in ("avg", "max"):
        np.testing.assert_array_equal(nx.channel_pool(single, kind).data, single.data)


@pytest.mark.parametrize("kind", ["avg", "max"])
def test_pools_match_loop_oracles(kind):
    rng = np.random.default_rng(5)
    for _ in range(10):
        x = rng.standard_normal((2, 3, 4, 5))
        np.testing.assert_allclose(nx.global_pool(T(x), kind).data, oracles.global_pool(x, kind), atol=1e-6)
        np.testing.assert_allclose(nx.channel_pool(T(x), kind).data, oracles.channel_pool(x, kind), atol=1e-6)


def test_pool_kind_is_validated():
    with pytest.raises(UsageError):
        nx.global_pool(T(np.zeros((1, 1, 2, 2))), "median")


# ---------------------------------------------------------------- broadcast_mul

def test_broadcast_mul_ones_zeros_and_oracle():
    rng = np.random.default_rng(6)
    x = rng.standard_normal((2, 3, 4, 4))
    np.testing.assert_array_equal(nx.broadcast_mul(T(x), T(np.ones((2, 3, 1, 1)))).data, x)
    assert not nx.broadcast_mul(T(x), T(np.zeros((2, 1, 4, 4)))).data.any()
    for shape in ((2, 3, 1, 1), (2, 1, 4, 4)):
        m = rng.uniform(0, 1, shape)
        np.testing.assert_allclose(nx.broadcast_mul(T(x), T(m)).data, oracles.broadcast_mul(x, m))


@pytest.mark.parametrize("shape", [(2, 3, 4, 4), (2, 1, 1, 1), (1, 3, 1, 1), (2, 3, 4, 1), (2, 2, 1, 1)])
def test_broadcast_mul_rejects_other_maps(shape):
    with pytest.raises(ShapeError):
        nx.broadcast_mul(T(np.zeros((2, 3, 4, 4))), T(np.zeros(shape)))


# ---------------------------------------------------------------- dense, mse

def test_dense_examples_and_oracle():
    rng = np.random.default_rng(7)
    x = rng.standard_normal((3, 4))
    ident = DenseParams(T(np.eye(4)), T(np.zeros(4)))
    np.testing.assert_array_equal(nx.dense(T(x), ident).data, x)
    p = DenseParams(T(rng.standard_normal((2, 4))), T(np.zeros(2)))
    assert not nx.dense(T(np.zeros((3, 4))), p).data.any()
    w, b = rng.standard_normal((5, 4)), rng.standard_normal(5)
    np.testing.assert_allclose(nx.dense(T(x), DenseParams(T(w), T(b))).data, oracles.dense(x, w, b), atol=1e-5)


def test_dense_mismatch_is_shape_error():
    with pytest.raises(ShapeError):
        nx.dense(T(np.zeros((2, 3))), DenseParams(T(np.zeros((2, 4))), T(np.zeros(2))))


def test_mse_examples_and_oracle():
    rng = np.random.default_rng(8)
    a = rng.standard_normal((2, 3, 4, 4))
    assert nx.mse(T(a), T(a)).data == 0
    assert nx.mse(T(a), T(a - 0.5)).data == pytest.approx(0.25, abs=1e-12)
    b = rng.standard_normal(a.shape)
    assert abs(float(nx.mse(T(a), T(b)).data) - oracles.mse(a, b)) <= 1e-7
    with pytest.raises(ShapeError):
        nx.mse(T(a), T(b[:, :2]))


# ---------------------------------------------------------------- grad

def test_grad_of_mse_against_zero():
    x = T(3.0, grad=True)
    (g,) = nx.grad(nx.mse(x, T(0.0)), [x])
    assert g == 6.0


def test_grad_unused_parameter_is_exact_zero():
    x, unused = T(np.ones(3), grad=True), T(np.ones((2, 2)), grad=True)
    gx, gu = nx.grad(nx.mse(x, T(np.zeros(3))), [x, unused])
    np.testing.assert_allclose(gx, 2 / 3)
    assert gu.shape == (2, 2) and not gu.any()


def test_grad_of_value_outside_graph_is_usage_error():
    x = T(np.ones(3), grad=True)
    stray = nx.relu(T(np.ones(3), grad=True))
    with pytest.raises(UsageError):
        nx.grad(nx.mse(x, T(np.zeros(3))), [stray])


def test_grad_of_non_scalar_needs_seed():
    x = T(np.ones(3), grad=True)
    with pytest.raises(UsageError):
        nx.grad(nx.relu(x), [x])
    (g,) = nx.grad(nx.relu(x), [x], grad_output=np.full(3, 2.0))
    np.testing.assert_array_equal(g, 2.0)


def test_grad_of_constant_is_usage_error():
    x = T(np.ones(3))
    with pytest.raises(UsageError):
        nx.grad(nx.mse(x, T(np.zeros(3))), [x])


def test_diamond_graph_accumulates():
    x = T(np.array([1.0, -2.0]), grad=True)
    y = nx.add(nx.scale(x, 3.0), x)
    (g,) = nx.grad(y, [x], grad_output=np.ones(2))
    np.testing.assert_array_equal(g, [4.0, 4.0])


def test_no_graph_without_requires_grad():
    out = nx.relu(T(np.ones(3)))
    assert out.op is None and out.is_leaf


@pytest.mark.parametrize("dtype", [np.float64, np.float32])
def test_every_op_passes_gradcheck(dtype):
    results = gradcheck.check_ops(seed=11, dtype=dtype)
    assert len(results) == len(gradcheck.OP_CASES)
    bad = [(r.name, r.worst) for r in results if not r.passed]
    assert not bad, bad


def test_corrupted_rule_fails_gradcheck(monkeypatch):
    original = nx.BACKWARD["sigmoid"]
    monkeypatch.setitem(nx.BACKWARD, "sigmoid", lambda g, node: [1.01 * r for r in original(g, node)])
    results = {r.name: r for r in gradcheck.check_ops(seed=0)}
    assert not results["sigmoid"].passed
    assert results["relu"].passed


def test_step_ladder_keeps_best_error():
    x = Tensor(np.array([0.3, -0.7]), requires_grad=True)
    r = gradcheck.check("relu", lambda a: nx.relu(a[0]), [x], np.random.default_rng(0),
                        step=(1.0, 1e-3))
    # a step of 1.0 straddles the kink at 0, the second step does not
    assert r.passed


# ---------------------------------------------------------------- kernels

def _entries(rng, cin, n_entries, max_off):
    rows = []
    for _ in range(n_entries):
        oy, ox = rng.integers(0, max_off + 1, 2)
        c0 = int(rng.integers(0, cin))
        c1 = int(rng.integers(c0 + 1, cin + 1))
        rows.append((oy, ox, c0, c1))
    return np.array(rows, dtype=np.int64)


@pytest.mark.skipif("cython" not in kernels.available_backends(), reason="compiled core not built")
@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_backends_agree_bitwise(dtype):
    rng = np.random.default_rng(9)
    for _ in range(10):
        src = rng.standard_normal((9, 10, 6)).astype(dtype)
        entries = _entries(rng, 6, int(rng.integers(1, 8)), 3)
        a = kernels.im2row(src, entries, 6, 7, backend="cython")
        b = kernels.im2row(src, entries, 6, 7, backend="numpy")
        np.testing.assert_array_equal(a, b)


def test_im2row_bounds_checked():
    src = np.zeros((4, 4, 2))
    with pytest.raises(ShapeError):
        kernels.im2row(src, np.array([[2, 0, 0, 2]], dtype=np.int64), 3, 3)
    with pytest.raises(ShapeError):
        kernels.im2row(src, np.array([[0, 0, 0, 3]], dtype=np.int64), 2, 2)


def test_im2row_layout():
    src = np.arange(3 * 3 * 2, dtype=np.float64).reshape(3, 3, 2)
    out = kernels.im2row(src, np.array([[0, 0, 0, 2], [1, 1, 1, 2]], dtype=np.int64), 2, 2,
                         backend="numpy")
    # row y*out_w+x = src[y, x, 0:2] followed by src[y+1, x+1, 1:2]
    np.testing.assert_array_equal(out[3], [src[1, 1, 0], src[1, 1, 1], src[2, 2, 1]])
