import numpy as np
import pytest
from hypothesis import given, strategies as st

import oracles
from ffpnet import ops
from ffpnet.attention import region_pool
from ffpnet.errors import ConfigError, DegenerateInputError
from ffpnet.tensor import Tensor, backward

# ---------------------------------------------------------------- conv2d


def test_conv_identity_kernel():
    x = np.arange(9.0).reshape(1, 1, 3, 3)
    y = ops.conv2d(Tensor(x), Tensor(np.ones((1, 1, 1, 1))), None, 1, 0, 1)
    np.testing.assert_array_equal(y.data, x)


def test_conv_ones_kernel_hand_values():
    x = np.arange(1.0, 10.0).reshape(1, 1, 3, 3)
    y = ops.conv2d(Tensor(x), Tensor(np.ones((1, 1, 3, 3))), Tensor(np.zeros(1)), 1, 1, 1)
    np.testing.assert_array_equal(y.data[0, 0], [[12, 21, 16], [27, 45, 33], [24, 39, 28]])


def test_dilated_conv_keeps_extent():
    x = Tensor(np.random.default_rng(0).normal(size=(1, 2, 10, 9)))
    y = ops.conv2d(x, Tensor(np.ones((3, 2, 3, 3))), None, 1, 3, 3)
    assert y.shape == (1, 3, 10, 9)


def test_conv_channel_mismatch():
    with pytest.raises(ConfigError):
        ops.conv2d(Tensor(np.ones((1, 2, 4, 4))), Tensor(np.ones((1, 3, 3, 3))), None, 1, 1, 1)


def test_conv_nonpositive_output():
    with pytest.raises(ConfigError):
        ops.conv2d(Tensor(np.ones((1, 1, 2, 2))), Tensor(np.ones((1, 1, 5, 5))), None, 1, 0, 1)


def test_conv_matches_loop_oracle_100_cases():
    assert oracles.sweep("conv2d", seed=0) <= 1e-5


@given(k=st.sampled_from([1, 3, 5, 7]), dil=st.integers(1, 3), h=st.integers(1, 12), w=st.integers(1, 12))
def test_same_padding_preserves_extent(k, dil, h, w):
    x = Tensor(np.zeros((1, 1, h, w)))
    y = ops.conv2d(x, Tensor(np.zeros((1, 1, k, k))), None, 1, dil * (k - 1) // 2, dil)
    assert y.shape[2:] == (h, w)


# ---------------------------------------------------------------- linear / activations


def test_linear_hand_values():
    y = ops.linear(Tensor([[1.0, 2.0]]), Tensor([[1.0, 1.0], [1.0, -1.0]]), Tensor([0.0, 1.0]))
    np.testing.assert_array_equal(y.data, [[3.0, 0.0]])


def test_linear_identity_and_batch():
    x = np.random.default_rng(0).normal(size=(24, 5))
    np.testing.assert_allclose(ops.linear(Tensor(x), Tensor(np.eye(5)), Tensor(np.zeros(5))).data, x)


def test_linear_mismatch():
    with pytest.raises(ConfigError):
        ops.linear(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 5))))


def test_activation_examples():
    np.testing.assert_array_equal(ops.activation("relu", Tensor([-1.0, 0.0, 2.0])).data, [0, 0, 2])
    assert ops.activation("sigmoid", Tensor([0.0])).data[0] == 0.5
    sm = ops.activation("softmax_lastdim", Tensor(np.log([1.0, 2.0, 3.0]))).data
    np.testing.assert_allclose(sm, [1 / 6, 2 / 6, 3 / 6], atol=1e-7)


def test_sigmoid_extreme_inputs_finite():
    y = ops.sigmoid(Tensor(np.array([-1000.0, 1000.0]))).data
    assert np.all(np.isfinite(y)) and y[0] == 0.0 and y[1] == 1.0


@given(st.lists(st.floats(-50, 50), min_size=1, max_size=12))
def test_softmax_normalised(values):
    y = ops.softmax(Tensor(np.array([values])), axis=-1).data
    assert abs(y.sum() - 1) <= 1e-6
    assert np.all(y >= 0) and np.all(y <= 1)


# ---------------------------------------------------------------- pooling / resize


def test_maxpool_hand_values():
    x = np.arange(1.0, 17.0).reshape(1, 1, 4, 4)
    np.testing.assert_array_equal(ops.maxpool2d(Tensor(x), 2, 2).data[0, 0], [[6, 8], [14, 16]])


def test_maxpool_constant_and_halving():
    y = ops.maxpool2d(Tensor(np.full((1, 2, 8, 6), 3.0)), 2)
    assert y.shape == (1, 2, 4, 3) and np.all(y.data == 3.0)


def test_maxpool_tie_goes_to_first():
    x = Tensor(np.ones((1, 1, 2, 2)), requires_grad=True)
    backward(ops.sum(ops.maxpool2d(x, 2)))
    np.testing.assert_array_equal(x.grad[0, 0], [[1, 0], [0, 0]])


def test_maxpool_window_too_large():
    with pytest.raises(ConfigError):
        ops.maxpool2d(Tensor(np.ones((1, 1, 1, 3))), 2)


def test_maxpool_matches_loop_oracle_100_cases():
    assert oracles.sweep("maxpool2d", seed=1) <= 1e-5


def test_gap_examples():
    assert ops.global_avg_pool(Tensor(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]))).data.item() == 2.5
    y = ops.global_avg_pool(Tensor(np.full((2, 3, 5, 4), 7.0)))
    assert y.shape == (2, 3, 1, 1) and np.all(y.data == 7.0)


def test_gap_matches_loop_oracle_100_cases():
    assert oracles.sweep("global_avg_pool", seed=2) <= 1e-5


def test_resize_identity_both_modes():
    x = Tensor(np.random.default_rng(0).normal(size=(1, 2, 5, 7)))
    for mode in ("bilinear", "nearest"):
        np.testing.assert_array_equal(ops.resize(x, 5, 7, mode).data, x.data)


def test_nearest_constant_extension():
    y = ops.resize(Tensor(np.full((1, 1, 1, 1), 4.0)), 4, 4, "nearest")
    assert np.all(y.data == 4.0) and y.shape == (1, 1, 4, 4)


def test_bilinear_2x2_to_4x4_formula():
    x = np.array([[[[0.0, 1.0], [2.0, 3.0]]]])
    got = ops.resize(Tensor(x), 4, 4, "bilinear").data[0, 0]
    # source coordinate (i + 0.5) / 2 - 0.5 clamped: 0, 0.25, 0.75, 1
    t = np.array([0.0, 0.25, 0.75, 1.0])
    expected = 2 * t[:, None] + t[None, :]
    np.testing.assert_allclose(got, expected, atol=1e-12)


def test_nearest_rounds_half_down():
    # 2 -> 4: sources -0.25, 0.25, 0.75, 1.25 -> 0, 0, 1, 1
    # 3 -> 2: sources 0.25, 1.75 -> 0, 2; 4 -> 2: 0.5, 2.5 -> round half down 0, 2
    for n_in, n_out in [(2, 4), (3, 2), (4, 2), (5, 3), (7, 4)]:
        m = ops.interp_matrix(n_in, n_out, "nearest")
        for i in range(n_out):
            assert m[i].argmax() == oracles.nearest_index(i, n_in, n_out)
    assert ops.interp_matrix(4, 2, "nearest").argmax(axis=1).tolist() == [0, 2]


def test_resize_matches_loop_oracle_100_cases():
    assert oracles.sweep("resize", seed=3) <= 1e-5


# ---------------------------------------------------------------- concat / region pool


def test_concat_examples():
    a = Tensor(np.ones((1, 2, 4, 4)))
    assert ops.concat([a], 1) is a
    assert ops.concat([a, a], 1).shape == (1, 4, 4, 4)
    with pytest.raises(ConfigError):
        ops.concat([a, Tensor(np.ones((1, 2, 3, 4)))], 1)


def test_concat_backward_splits():
    a = Tensor(np.ones((1, 2, 2)), requires_grad=True)
    b = Tensor(np.ones((1, 3, 2)), requires_grad=True)
    w = np.arange(10.0).reshape(1, 5, 2)
    backward(ops.sum(ops.concat([a, b], 1) * w))
    np.testing.assert_array_equal(a.grad, w[:, :2])
    np.testing.assert_array_equal(b.grad, w[:, 2:])


def test_region_pool_hand_values():
    x = np.arange(1.0, 17.0).reshape(1, 1, 4, 4)
    np.testing.assert_allclose(region_pool(Tensor(x), 2).data[0, 0], [3.5, 5.5, 11.5, 13.5])


def test_region_pool_grid_too_large():
    with pytest.raises(ConfigError):
        region_pool(Tensor(np.ones((1, 1, 3, 5))), 4)


def test_region_pool_matches_loop_oracle_100_cases():
    assert oracles.sweep("region_pool", seed=4) <= 1e-5


# ---------------------------------------------------------------- batch norm / dropout


def _bn(x, training=True, rm=None, rv=None):
    c = x.shape[1]
    rm = np.zeros(c) if rm is None else rm
    rv = np.ones(c) if rv is None else rv
    return ops.batch_norm(Tensor(x), Tensor(np.ones(c)), Tensor(np.zeros(c)), rm, rv, training)


def test_batch_norm_two_values():
    y = _bn(np.array([0.0, 2.0]).reshape(2, 1, 1, 1)).data.reshape(-1)
    np.testing.assert_allclose(y, [-1 / np.sqrt(1 + 1e-5), 1 / np.sqrt(1 + 1e-5)])


def test_batch_norm_standardised_input_nearly_unchanged():
    x = np.random.default_rng(0).normal(size=(8, 3, 4, 4))
    x = (x - x.mean(axis=(0, 2, 3), keepdims=True)) / x.std(axis=(0, 2, 3), keepdims=True)
    assert np.abs(_bn(x).data - x).max() < 1e-4


def test_batch_norm_running_stats_update():
    x = np.random.default_rng(0).normal(3.0, 2.0, size=(4, 2, 3, 3))
    rm, rv = np.zeros(2), np.ones(2)
    _bn(x, True, rm, rv)
    m = 4 * 9
    np.testing.assert_allclose(rm, 0.1 * x.mean(axis=(0, 2, 3)))
    np.testing.assert_allclose(rv, 0.9 + 0.1 * x.var(axis=(0, 2, 3)) * m / (m - 1))


def test_batch_norm_eval_is_affine():
    rm, rv = np.array([1.0]), np.array([4.0])
    x = np.random.default_rng(0).normal(size=(3, 1, 2, 2))
    y = _bn(x, False, rm, rv).data
    np.testing.assert_allclose(y, (x - 1.0) / np.sqrt(4.0 + 1e-5))


def test_batch_norm_degenerate_batch():
    with pytest.raises(DegenerateInputError):
        _bn(np.ones((1, 2, 1, 1)))


def test_dropout_identities():
    x = Tensor(np.random.default_rng(0).normal(size=(4, 4)))
    assert ops.dropout(x, 0.0, True, np.random.default_rng(0)) is x
    assert ops.dropout(x, 0.7, False, None) is x
    with pytest.raises(ConfigError):
        ops.dropout(x, 1.0, True, np.random.default_rng(0))


def test_dropout_monte_carlo():
    x = Tensor(np.ones(100_000))
    y = ops.dropout(x, 0.5, True, np.random.default_rng(0)).data
    assert abs((y != 0).mean() - 0.5) < 0.01
    assert abs(y.mean() - 1.0) < 0.02


def test_relu_propagates_nan():
    y = ops.relu(Tensor(np.array([np.nan, -1.0, 2.0])))
    assert np.isnan(y.data[0]) and y.data[1] == 0 and y.data[2] == 2
