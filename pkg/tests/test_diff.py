import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from timelogic import diff
from timelogic.diff import Tape, Value


def backward_of(fn, *arrays):
    """Run fn over parameter leaves inside a tape; return (out, leaves)."""
    leaves = [Value(np.asarray(a, dtype=float), requires_grad=True) for a in arrays]
    with Tape() as tape:
        out = fn(*leaves)
    tape.backward(out)
    return out, leaves


# ---------------------------------------------------------------------------
# convolution


def test_conv_example():
    out = diff.conv1d_valid(
        diff.as_value([0, 1, 0, 1, 1.0]), diff.as_value([1 / 3, 1 / 3, 1 / 3]), 2
    )
    np.testing.assert_allclose(out.data, [1 / 3, 2 / 3])


def test_conv_identity_kernel():
    x = np.linspace(0, 1, 9)
    out = diff.conv1d_valid(diff.as_value(x), diff.as_value([1.0]), 1)
    np.testing.assert_array_equal(out.data, x)


def test_conv_rejects_long_kernel():
    with pytest.raises(ValueError):
        diff.conv1d_valid(diff.as_value([1.0, 2.0]), diff.as_value([1.0] * 3), 1)


def test_conv_kernel_gradient_matches_fd():
    rng = np.random.default_rng(0)
    x = rng.normal(size=13)
    err = diff.grad_check(
        lambda k: diff.sum_all(diff.conv1d_valid(diff.as_value(x), k, 2)),
        rng.normal(size=3),
    )
    assert err <= 1e-4


def test_conv_input_gradient_matches_fd():
    rng = np.random.default_rng(1)
    k = rng.normal(size=4)
    err = diff.grad_check(
        lambda x: diff.sum_all(diff.conv1d_valid(x, diff.as_value(k), 3)),
        rng.normal(size=17),
    )
    assert err <= 1e-4


def test_conv_per_event_matches_rowwise():
    rng = np.random.default_rng(2)
    x = rng.random((2, 3, 4, 20))
    kernels = rng.normal(size=(4, 3))
    batched = diff.conv1d_per_event(diff.as_value(x), diff.as_value(kernels), 2)
    for b in range(2):
        for o in range(3):
            for e in range(4):
                row = diff.conv1d_valid(
                    diff.as_value(x[b, o, e]), diff.as_value(kernels[e]), 2
                )
                np.testing.assert_allclose(
                    batched.data[b, o, e], row.data, rtol=1e-12
                )


# ---------------------------------------------------------------------------
# softmax


def test_softmax_uniform():
    out = diff.softmax(diff.as_value([0.0, 0.0, 0.0]))
    np.testing.assert_allclose(out.data, [1 / 3] * 3)


def test_softmax_example():
    out = diff.softmax(diff.as_value([3.7, -6.4, -3.7]))
    np.testing.assert_allclose(out.data, [0.99935, 0.000041, 0.00061], atol=5e-6)
    assert out.data.sum() == pytest.approx(1.0, abs=1e-9)
    assert np.all(out.data > 0)


@given(
    st.lists(st.floats(-30, 30), min_size=1, max_size=6),
    st.floats(-50, 50),
)
def test_softmax_shift_invariance(xs, c):
    x = np.asarray(xs)
    a = diff.softmax(diff.as_value(x)).data
    b = diff.softmax(diff.as_value(x + c)).data
    np.testing.assert_allclose(a, b, atol=1e-12)


# ---------------------------------------------------------------------------
# reductions


def test_reduce_min_example():
    out = diff.reduce_min(diff.as_value([6.86, 7.15, 5.6, 6.3, 7.1]))
    assert out.item() == 5.6


def test_reduce_max_singleton_gradient():
    _, (x,) = backward_of(lambda x: diff.reduce_max(x), [4.2])
    assert x.grad.tolist() == [1.0]


def test_reduce_min_tie_goes_to_lowest_index():
    _, (x,) = backward_of(lambda x: diff.reduce_min(x), [2.0, 2.0, 5.0])
    assert x.grad.tolist() == [1.0, 0.0, 0.0]


def test_reduce_axis_routing():
    x0 = np.array([[3.0, 1.0, 2.0], [0.5, 4.0, 0.5]])
    _, (x,) = backward_of(lambda x: diff.sum_all(diff.reduce_min(x, axis=-1)), x0)
    np.testing.assert_array_equal(x.grad, [[0, 1, 0], [1, 0, 0]])


def test_reduce_empty_rejected():
    with pytest.raises(ValueError):
        diff.reduce_min(diff.as_value(np.empty(0)))


# ---------------------------------------------------------------------------
# elementwise suite


def test_sigmoid_at_zero():
    assert diff.sigmoid(diff.as_value(0.0)).item() == 0.5


def test_min2_selection_and_gradient():
    out, (a, b) = backward_of(lambda a, b: diff.min2(a, b), [0.9994], [0.7])
    assert out.item() == 0.7
    assert a.grad.tolist() == [0.0]
    assert b.grad.tolist() == [1.0]


def test_min2_tie_prefers_first_operand():
    _, (a, b) = backward_of(lambda a, b: diff.min2(a, b), [1.5], [1.5])
    assert a.grad.tolist() == [1.0]
    assert b.grad.tolist() == [0.0]


def test_clamp_saturation():
    out, (x,) = backward_of(lambda x: diff.clamp(x, 0.0, 1.0), [1.3])
    assert out.item() == 1.0
    assert x.grad.tolist() == [0.0]


def test_shape_mismatch_rejected():
    with pytest.raises(ValueError):
        diff.add(diff.as_value([1.0, 2.0]), diff.as_value([1.0, 2.0, 3.0]))


def test_fanout_adjoints_sum():
    _, (x,) = backward_of(lambda x: diff.add(x, x), [3.0])
    assert x.grad.tolist() == [2.0]


def test_dot_linear_gradient_exact():
    c = np.array([2.0, -1.0, 0.5])
    err = diff.grad_check(
        lambda x: diff.dot(x, diff.as_value(c)), np.array([1.0, 2.0, 3.0])
    )
    assert err <= 1e-7


# ---------------------------------------------------------------------------
# dropout


def test_dropout_rate_zero_and_eval_identity():
    rng = np.random.default_rng(0)
    x = diff.as_value([1.0, 2.0, 3.0])
    np.testing.assert_array_equal(diff.dropout(x, 0.0, rng, True).data, x.data)
    np.testing.assert_array_equal(diff.dropout(x, 0.9, rng, False).data, x.data)


def test_dropout_rejects_rate_one():
    with pytest.raises(ValueError):
        diff.dropout(diff.as_value([1.0]), 1.0, np.random.default_rng(0), True)


def test_dropout_preserves_expectation():
    rng = np.random.default_rng(42)
    x = diff.as_value(np.ones(10_000))
    out = diff.dropout(x, 0.5, rng, True)
    assert abs(out.data.mean() - 1.0) < 0.02


# ---------------------------------------------------------------------------
# structural ops


def test_stack_expand_reshape_roundtrip_gradients():
    rng = np.random.default_rng(3)
    err = diff.grad_check(
        lambda x: diff.sum_all(diff.expand_last(x, 4)), rng.normal(size=(2, 3))
    )
    assert err <= 1e-6
    weight = np.array([[1.0, 3.0], [0.5, -2.0]])
    err = diff.grad_check(
        lambda x: diff.sum_all(
            diff.mul(diff.stack_last([x, x]), diff.as_value(weight))
        ),
        rng.normal(size=2),
    )
    assert err <= 1e-6


def test_tile_pairs_layout():
    x = np.arange(6, dtype=float).reshape(1, 2, 3)  # [b, k, X]
    u = diff.tile_pairs(diff.as_value(x), "u")
    v = diff.tile_pairs(diff.as_value(x), "v")
    assert u.data.shape == (1, 2, 2, 3, 3)
    for i in range(2):
        for j in range(2):
            for a in range(3):
                for b in range(3):
                    assert u.data[0, i, j, a, b] == x[0, i, a]
                    assert v.data[0, i, j, a, b] == x[0, j, b]


def test_affine_last_matches_fd():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(5, 3))
    for which in range(3):
        arrays = [x, np.array([0.1, -0.2, 0.3]), np.array([1.5, 0.7, 2.0])]

        def f(v, which=which, arrays=arrays):
            parts = [diff.as_value(a) for a in arrays]
            parts[which] = v
            return diff.sum_all(diff.sigmoid(diff.affine_last(*parts)))

        assert diff.grad_check(f, arrays[which]) <= 1e-4


# ---------------------------------------------------------------------------
# gradient sweep + determinism


@settings(deadline=None, max_examples=100)
@given(st.integers(0, 10_000))
def test_grad_check_sweep(seed):
    """Every smooth primitive passes finite differences on random inputs."""
    rng = np.random.default_rng(seed)
    x0 = rng.normal(size=6)
    y0 = rng.normal(size=6) + 8.0  # keep min/max comparisons away from ties
    cases = [
        lambda x: diff.sum_all(diff.mul(diff.sigmoid(x), diff.as_value(y0))),
        lambda x: diff.sum_all(diff.softmax(x)),
        lambda x: diff.mean_all(diff.min2(x, diff.as_value(y0))),
        lambda x: diff.reduce_max(diff.mul(x, x)),
        lambda x: diff.sum_all(
            diff.conv1d_valid(x, diff.as_value(np.array([0.4, -0.3])), 2)
        ),
        lambda x: diff.dot(x, diff.as_value(y0)),
    ]
    case = cases[seed % len(cases)]
    assert diff.grad_check(case, x0) <= 1e-4


def test_matmul_gradients():
    rng = np.random.default_rng(5)
    a0 = rng.normal(size=(3, 4))
    b0 = rng.normal(size=(4, 2))
    err = diff.grad_check(
        lambda a: diff.sum_all(diff.matmul(a, diff.as_value(b0))), a0
    )
    assert err <= 1e-5
    err = diff.grad_check(
        lambda b: diff.sum_all(diff.matmul(diff.as_value(a0), b)), b0
    )
    assert err <= 1e-5


def test_forward_bitwise_deterministic():
    rng = np.random.default_rng(6)
    x = rng.normal(size=(4, 7))
    one = diff.softmax(diff.mul(diff.as_value(x), diff.as_value(2.0))).data
    two = diff.softmax(diff.mul(diff.as_value(x), diff.as_value(2.0))).data
    assert np.array_equal(one, two)


def test_no_tape_means_constant_result():
    x = Value(np.array([1.0, 2.0]), requires_grad=True)
    out = diff.sigmoid(x)
    assert not out.requires_grad
