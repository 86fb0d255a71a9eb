import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from res2lab import nnops
from res2lab.errors import EmptySpatial, NonDivisibleChannels, ShapeMismatch, ValidationError
from res2lab.nnops import BatchNormParams, Conv2dParams

import scalar_oracles as oracle


# --- conv2d ---------------------------------------------------------------

def test_identity_kernel(rng):
    x = rng.standard_normal((2, 1, 5, 4)).astype(np.float32)
    y = nnops.conv2d(x, Conv2dParams(np.ones((1, 1, 1, 1), np.float32)))
    assert np.array_equal(y, x)


def test_zero_weights(rng):
    x = rng.standard_normal((1, 3, 6, 6)).astype(np.float32)
    assert not nnops.conv2d(x, Conv2dParams(np.zeros((4, 3, 3, 3), np.float32), padding=1)).any()


@pytest.mark.parametrize("method", ["fast", "direct"])
def test_all_ones_center_sum(method):
    x = np.arange(1, 10, dtype=np.float32).reshape(1, 1, 3, 3)
    y = nnops.conv2d(x, Conv2dParams(np.ones((1, 1, 3, 3), np.float32), padding=1), method)
    assert y[0, 0, 1, 1] == 45.0
    # corners see a 2x2 window
    assert y[0, 0, 0, 0] == 1 + 2 + 4 + 5


@pytest.mark.parametrize("groups,stride,pad", [(1, 1, 1), (2, 2, 1), (4, 1, 0), (1, 2, 0)])
def test_direct_matches_scalar_oracle_bit_exact(groups, stride, pad, rng):
    x = rng.standard_normal((2, 4, 6, 5))
    w = rng.standard_normal((8, 4 // groups, 3, 3))
    got = nnops.conv2d_direct(x, w, stride, pad, groups)
    assert np.array_equal(got, oracle.conv2d(x, w, stride, pad, groups))


@pytest.mark.parametrize("k,stride,pad", [(3, 1, 1), (3, 2, 1), (1, 1, 0), (1, 2, 0), (7, 2, 3)])
def test_fast_matches_direct(k, stride, pad, rng):
    x = rng.standard_normal((2, 6, 9, 9)).astype(np.float32)
    w = rng.standard_normal((5, 6, k, k)).astype(np.float32)
    p = Conv2dParams(w, stride, pad)
    assert oracle.rel_err(nnops.conv2d(x, p), nnops.conv2d(x, p, "direct").astype(np.float64)) <= 1e-5


@settings(max_examples=40, deadline=None)
@given(st.sampled_from([1, 2, 4]), st.integers(1, 2), st.integers(0, 1), st.integers(0, 2**31))
def test_grouped_equals_concat_of_partitions(groups, stride, pad, seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((2, 8, 6, 6)).astype(np.float32)
    w = rng.standard_normal((8, 8 // groups, 3, 3)).astype(np.float32)
    for method in ("fast", "direct"):
        whole = nnops.conv2d(x, Conv2dParams(w, stride, pad, groups), method)
        ci, co = 8 // groups, 8 // groups
        parts = [nnops.conv2d(np.ascontiguousarray(x[:, g * ci:(g + 1) * ci]),
                              Conv2dParams(np.ascontiguousarray(w[g * co:(g + 1) * co]), stride, pad), method)
                 for g in range(groups)]
        assert np.array_equal(whole, np.concatenate(parts, axis=1))


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 9), st.integers(1, 9), st.sampled_from([1, 3, 5]), st.integers(1, 3), st.integers(0, 2))
def test_output_shape_rule(h, w, k, stride, pad):
    if h + 2 * pad < k or w + 2 * pad < k:
        return
    x = np.zeros((1, 2, h, w), np.float32)
    y = nnops.conv2d(x, Conv2dParams(np.zeros((3, 2, k, k), np.float32), stride, pad))
    assert y.shape == (1, 3, (h + 2 * pad - k) // stride + 1, (w + 2 * pad - k) // stride + 1)


def test_conv_errors():
    x = np.zeros((1, 3, 4, 4), np.float32)
    with pytest.raises(ShapeMismatch):
        nnops.conv2d(x, Conv2dParams(np.zeros((2, 4, 3, 3), np.float32)))
    with pytest.raises(NonDivisibleChannels):
        nnops.conv2d(x, Conv2dParams(np.zeros((2, 1, 3, 3), np.float32), groups=2))
    with pytest.raises(NonDivisibleChannels):
        Conv2dParams(np.zeros((3, 1, 3, 3)), groups=2)
    with pytest.raises(ValidationError):
        Conv2dParams(np.zeros((2, 3, 2, 2)))
    with pytest.raises(ShapeMismatch):
        nnops.conv2d(np.zeros((1, 3, 2, 2)), Conv2dParams(np.zeros((2, 3, 5, 5))))


# --- batch norm -------------------------------------------------------------

def test_bn_train_standardized_input_passes_through(rng):
    x = rng.standard_normal((4, 3, 5, 5))
    x = (x - x.mean(axis=(0, 2, 3), keepdims=True)) / x.std(axis=(0, 2, 3), keepdims=True)
    y = nnops.batch_norm(x, BatchNormParams.identity(3, np.float64), "train")
    # the only deviation is the epsilon floor: y = x / sqrt(1 + eps)
    assert np.all(np.abs(y - x) <= 1e-5 * np.abs(x))
    np.testing.assert_allclose(y, x / np.sqrt(1 + 1e-5), rtol=1e-12)


def test_bn_constant_input_gives_beta():
    x = np.full((2, 3, 4, 4), 7.0, np.float32)
    p = BatchNormParams.identity(3)
    p.beta = np.array([0.5, -1.0, 2.0], np.float32)
    y = nnops.batch_norm(x, p, "train")
    assert np.allclose(y, p.beta[None, :, None, None], atol=0)


@pytest.mark.parametrize("mode", ["train", "eval"])
def test_bn_matches_scalar_oracle(mode, rng):
    x = rng.standard_normal((2, 3, 4, 4)).astype(np.float32)
    g, b = rng.uniform(0.5, 1.5, 3), rng.normal(0, 0.3, 3)
    m, v = rng.normal(0, 0.3, 3), rng.uniform(0.5, 1.5, 3)
    p = BatchNormParams(*(a.astype(np.float32) for a in (g, b, m, v)))
    got = nnops.batch_norm(x, p, mode)
    ref = oracle.batch_norm(x, g, b, m, v, training=mode == "train")
    assert oracle.rel_err(got, ref) <= 1e-6


def test_bn_running_stats_update(rng):
    x = rng.standard_normal((4, 2, 3, 3))
    p = BatchNormParams.identity(2, np.float64)
    nnops.batch_norm(x, p, "train")
    n = 4 * 9
    np.testing.assert_allclose(p.running_mean, 0.1 * x.mean(axis=(0, 2, 3)), rtol=1e-12)
    np.testing.assert_allclose(p.running_var, 0.9 + 0.1 * x.var(axis=(0, 2, 3)) * n / (n - 1), rtol=1e-12)
    before = (p.running_mean.copy(), p.running_var.copy())
    nnops.batch_norm(x, p, "eval")
    assert np.array_equal(p.running_mean, before[0]) and np.array_equal(p.running_var, before[1])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.floats(-3, 3), st.floats(-3, 3))
def test_bn_eval_is_affine(seed, a, b):
    rng = np.random.default_rng(seed)
    x1, x2 = rng.standard_normal((2, 2, 3, 3, 3))
    p = BatchNormParams(rng.uniform(0.5, 2, 3), rng.normal(size=3), rng.normal(size=3), rng.uniform(0.5, 2, 3))
    f = lambda v: nnops.batch_norm(v, p, "eval")  # noqa: E731
    # affine: f(a x1 + b x2) = a f(x1) + b f(x2) + (1 - a - b) f(0)
    lhs = f(a * x1 + b * x2)
    rhs = a * f(x1) + b * f(x2) + (1 - a - b) * f(np.zeros_like(x1))
    np.testing.assert_allclose(lhs, rhs, rtol=1e-9, atol=1e-9)


def test_bn_errors():
    with pytest.raises(ShapeMismatch):
        nnops.batch_norm(np.zeros((1, 3, 2, 2)), BatchNormParams.identity(2))
    with pytest.raises(ValidationError):
        nnops.batch_norm(np.zeros((1, 2, 2, 2)), BatchNormParams.identity(2), "infer")
    with pytest.raises(ValidationError):
        BatchNormParams(np.ones(2), np.zeros(2), np.zeros(2), -np.ones(2))


# --- activations --------------------------------------------------------------

def test_relu_examples():
    assert nnops.relu(np.array([-1.0, 2.0, 0.0])).tolist() == [0.0, 2.0, 0.0]


def test_sigmoid_examples_and_oracle():
    assert nnops.sigmoid(np.array([0.0]))[0] == 0.5
    grid = np.linspace(-30, 30, 601)
    got = nnops.sigmoid(grid)
    assert np.all(np.diff(got) >= 0)
    ref = np.array([oracle.sigmoid(v) for v in grid])
    np.testing.assert_allclose(got, ref, rtol=1e-15)
    assert np.isfinite(nnops.sigmoid(np.array([-1000.0, 1000.0]))).all()


# --- pooling ----------------------------------------------------------------

def test_global_avg_pool():
    x = np.array([1, 2, 3, 4], np.float32).reshape(1, 1, 2, 2)
    assert nnops.global_avg_pool(x)[0, 0, 0, 0] == 2.5
    assert np.all(nnops.global_avg_pool(np.full((2, 3, 4, 5), 1.25)) == 1.25)
    with pytest.raises(EmptySpatial):
        nnops.global_avg_pool(np.zeros((1, 1, 0, 3)))


def test_global_avg_pool_oracle(rng):
    x = rng.standard_normal((2, 3, 5, 4))
    assert oracle.rel_err(nnops.global_avg_pool(x), oracle.spatial_mean(x)) <= 1e-14


def test_window_pools_small_example():
    x = np.array([1, 2, 3, 4], np.float32).reshape(1, 1, 2, 2)
    assert nnops.avg_pool2d(x, 2, 2)[0, 0, 0, 0] == 2.5
    assert nnops.max_pool2d(x, 2, 2)[0, 0, 0, 0] == 4


def test_window_pools_constant():
    x = np.full((1, 2, 6, 6), 3.0)
    assert np.all(nnops.avg_pool2d(x, 3, 1) == 3.0)
    assert np.all(nnops.max_pool2d(x, 3, 2, 1) == 3.0)


@pytest.mark.parametrize("k,stride,pad", [(3, 2, 1), (2, 2, 0), (3, 1, 1), (3, 1, 0)])
def test_window_pools_oracle(k, stride, pad, rng):
    x = rng.standard_normal((2, 3, 7, 6))
    assert oracle.rel_err(nnops.avg_pool2d(x, k, stride, pad), oracle.avg_pool(x, k, stride, pad)) <= 1e-14
    assert np.array_equal(nnops.max_pool2d(x, k, stride, pad), oracle.max_pool(x, k, stride, pad))


def test_pool_errors():
    with pytest.raises(ShapeMismatch):
        nnops.avg_pool2d(np.zeros((1, 1, 2, 2)), 3, 1)
    with pytest.raises(ValidationError):
        nnops.max_pool2d(np.zeros((1, 1, 4, 4)), 3, 0)


# --- fully connected -------------------------------------------------------------

def test_fc_identity_and_zero(rng):
    x = rng.standard_normal((3, 4))
    assert np.array_equal(nnops.fully_connected(x, np.eye(4), np.zeros(4)), x)
    b = rng.standard_normal(5)
    assert np.array_equal(nnops.fully_connected(np.zeros((2, 4, 1, 1)), rng.standard_normal((5, 4)), b),
                          np.tile(b, (2, 1)))


def test_fc_oracle(rng):
    x, w, b = rng.standard_normal((3, 6, 1, 1)), rng.standard_normal((4, 6)), rng.standard_normal(4)
    assert oracle.rel_err(nnops.fully_connected(x, w, b), oracle.dense(x, w, b)) <= 1e-14


def test_fc_errors():
    with pytest.raises(ShapeMismatch):
        nnops.fully_connected(np.zeros((2, 3)), np.zeros((4, 5)), np.zeros(4))
    with pytest.raises(ShapeMismatch):
        nnops.fully_connected(np.zeros((2, 3, 2, 2)), np.zeros((4, 3)), np.zeros(4))
    with pytest.raises(ShapeMismatch):
        nnops.fully_connected(np.zeros((2, 3)), np.zeros((4, 3)), np.zeros(3))
