"""Tensor core: forward semantics, autodiff against finite differences, Adam."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fdcheck import gradient_rel_error
from tahg.errors import ConfigError, DimensionError, NumericError, TapeError
from tahg.tensor import (
    AdamState,
    Tape,
    Tensor,
    adam_step,
    add,
    concat_cols,
    concat_rows,
    dropout,
    exp,
    init_adam_state,
    layer_norm,
    log,
    logsumexp_rows,
    matmul,
    mean_rows,
    mul,
    relu,
    reshape,
    scale,
    softmax_rows,
    sum_all,
    take_rows,
    transpose,
    xavier_uniform,
)


def rand(rng, *shape, requires_grad=True):
    return Tensor(rng.standard_normal(shape), requires_grad=requires_grad)


# ---------------------------------------------------------------------------
# matmul


def test_matmul_identity():
    x = Tensor([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
    eye = Tensor(np.eye(2))
    np.testing.assert_array_equal(matmul(eye, x).data, x.data)


def test_matmul_hand_checked():
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    b = Tensor([[1.0], [1.0]])
    np.testing.assert_array_equal(matmul(a, b).data, [[3.0], [7.0]])


def test_matmul_shape_error_names_both_shapes():
    a = Tensor(np.zeros((2, 3)))
    b = Tensor(np.zeros((4, 2)))
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(4, 2\)"):
        matmul(a, b)


@pytest.mark.parametrize("seed", range(3))
def test_matmul_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    a = rand(rng, 5, 4)
    b = rand(rng, 4, 3)
    w = rng.standard_normal((5, 3))

    def loss():
        return sum_all(mul(matmul(a, b), Tensor(w)))

    assert gradient_rel_error(loss, [a, b]) <= 1e-6


def test_matmul_batched_gradients():
    rng = np.random.default_rng(7)
    a = rand(rng, 3, 4, 5)
    b = rand(rng, 3, 5, 2)
    c = rand(rng, 2, 6)
    w = rng.standard_normal((3, 4, 6))

    def loss():
        return sum_all(mul(matmul(matmul(a, b), c), Tensor(w)))

    assert gradient_rel_error(loss, [a, b, c]) <= 1e-6


# ---------------------------------------------------------------------------
# softmax


def test_softmax_zero_row_is_uniform():
    out = softmax_rows(Tensor(np.zeros((1, 4))))
    np.testing.assert_allclose(out.data, 0.25, atol=1e-15)


def test_softmax_large_inputs_do_not_overflow():
    out = softmax_rows(Tensor([[1000.0, 1000.0]]))
    np.testing.assert_allclose(out.data, [[0.5, 0.5]], atol=1e-15)


def test_softmax_nan_input_raises():
    with pytest.raises(NumericError):
        softmax_rows(Tensor([[np.nan, 0.0]]))


def test_softmax_full_jacobian_matches_finite_differences():
    rng = np.random.default_rng(3)
    x = rand(rng, 3, 4)
    for i in range(3):
        for j in range(4):
            pick = np.zeros((3, 4))
            pick[i, j] = 1.0

            def loss():
                return sum_all(mul(softmax_rows(x), Tensor(pick)))

            assert gradient_rel_error(loss, [x]) <= 1e-6


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(min_value=-50, max_value=50), min_size=2, max_size=6), st.floats(min_value=-100, max_value=100))
def test_softmax_rows_sum_to_one_and_shift_invariant(row, c):
    x = Tensor([row])
    s = softmax_rows(x)
    assert abs(s.data.sum() - 1.0) <= 1e-12
    shifted = softmax_rows(Tensor([[v + c for v in row]]))
    np.testing.assert_allclose(s.data, shifted.data, atol=1e-12)


# ---------------------------------------------------------------------------
# layer norm


def test_layer_norm_constant_row_is_zero():
    x = Tensor([[3.0, 3.0, 3.0]])
    out = layer_norm(x, Tensor(np.ones(3)), Tensor(np.zeros(3)), eps=1e-5)
    np.testing.assert_allclose(out.data, 0.0, atol=1e-12)


def test_layer_norm_two_point_standardization():
    x = Tensor([[1.0, 3.0]])
    out = layer_norm(x, Tensor(np.ones(2)), Tensor(np.zeros(2)), eps=1e-12)
    np.testing.assert_allclose(out.data, [[-1.0, 1.0]], atol=1e-9)


def test_layer_norm_normalizes_each_row():
    rng = np.random.default_rng(0)
    x = Tensor(rng.standard_normal((4, 8)) * 3.0 + 1.0)
    out = layer_norm(x, Tensor(np.ones(8)), Tensor(np.zeros(8)), eps=1e-10)
    np.testing.assert_allclose(out.data.mean(axis=-1), 0.0, atol=1e-12)
    np.testing.assert_allclose(out.data.var(axis=-1), 1.0, atol=1e-6)


@pytest.mark.parametrize("seed", range(3))
def test_layer_norm_gradients(seed):
    rng = np.random.default_rng(seed)
    x = rand(rng, 3, 6)
    gain = Tensor(rng.standard_normal(6), requires_grad=True)
    bias = Tensor(rng.standard_normal(6), requires_grad=True)
    w = rng.standard_normal((3, 6))

    def loss():
        return sum_all(mul(layer_norm(x, gain, bias), Tensor(w)))

    assert gradient_rel_error(loss, [x, gain, bias]) <= 1e-5


# ---------------------------------------------------------------------------
# elementwise and structural ops


def test_relu_definition():
    out = relu(Tensor([[-1.0, 0.0, 2.0]]))
    np.testing.assert_array_equal(out.data, [[0.0, 0.0, 2.0]])


def test_dropout_eval_mode_is_identity():
    x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    assert dropout(x, 0.5, training=False) is x


def test_dropout_training_rescales_survivors():
    rng = np.random.default_rng(0)
    x = Tensor(np.ones((100, 100)))
    out = dropout(x, 0.25, training=True, rng=rng)
    kept = out.data[out.data != 0.0]
    np.testing.assert_allclose(kept, 1.0 / 0.75)
    assert abs((out.data != 0).mean() - 0.75) < 0.02


def test_dropout_invalid_probability():
    with pytest.raises(ConfigError):
        dropout(Tensor([1.0]), 1.0, training=True, rng=np.random.default_rng(0))


def test_log_rejects_nonpositive():
    with pytest.raises(NumericError):
        log(Tensor([[0.0, 1.0]]))


@pytest.mark.parametrize("seed", range(3))
def test_elementwise_and_structural_gradients(seed):
    rng = np.random.default_rng(100 + seed)
    # relu checked away from 0
    x = Tensor(rng.standard_normal((4, 5)) + np.sign(rng.standard_normal((4, 5))) * 0.5, requires_grad=True)
    y = rand(rng, 4, 5)
    row = rand(rng, 1, 5)
    col = rand(rng, 4, 1)
    w = rng.standard_normal((4, 5))
    w2 = rng.standard_normal((5, 4))

    cases = {
        "relu": lambda: sum_all(mul(relu(x), Tensor(w))),
        "add": lambda: sum_all(mul(add(x, y), Tensor(w))),
        "add_row_broadcast": lambda: sum_all(mul(add(x, row), Tensor(w))),
        "add_col_broadcast": lambda: sum_all(mul(add(x, col), Tensor(w))),
        "mul": lambda: sum_all(mul(mul(x, y), Tensor(w))),
        "scale": lambda: sum_all(mul(scale(x, -2.5), Tensor(w))),
        "exp": lambda: sum_all(mul(exp(scale(x, 0.3)), Tensor(w))),
        "log": lambda: sum_all(mul(log(exp(x)), Tensor(w))),
        "transpose": lambda: sum_all(mul(transpose(x), Tensor(w2))),
        "reshape": lambda: sum_all(mul(reshape(x, (2, 10)), Tensor(w.reshape(2, 10)))),
        "mean_rows": lambda: sum_all(mul(mean_rows(x), Tensor(w[:1]))),
        "concat_cols": lambda: sum_all(mul(concat_cols([x, y]), Tensor(np.hstack([w, w])))),
        "concat_rows": lambda: sum_all(mul(concat_rows([x, y]), Tensor(np.vstack([w, w])))),
        "logsumexp_rows": lambda: sum_all(mul(logsumexp_rows(x), Tensor(w[:, :1]))),
        "softmax_rows": lambda: sum_all(mul(softmax_rows(x), Tensor(w))),
    }
    for name, loss in cases.items():
        err = gradient_rel_error(loss, [x, y, row, col])
        assert err <= 1e-5, f"{name}: rel err {err}"


def test_take_rows_gather_and_scatter_gradient():
    rng = np.random.default_rng(5)
    table = rand(rng, 6, 3)
    idx = np.array([[0, 2], [2, 5]])
    out = take_rows(table, idx)
    assert out.shape == (2, 2, 3)
    np.testing.assert_array_equal(out.data[1, 0], table.data[2])

    w = rng.standard_normal((2, 2, 3))

    def loss():
        return sum_all(mul(take_rows(table, idx), Tensor(w)))

    # row 2 is used twice, so scatter accumulation is exercised
    assert gradient_rel_error(loss, [table]) <= 1e-6


def test_take_rows_out_of_range():
    with pytest.raises(IndexError):
        take_rows(Tensor(np.zeros((3, 2))), [3])


def test_dropout_gradient_with_fixed_mask():
    base = np.random.default_rng(42).standard_normal((4, 4))
    x = Tensor(base, requires_grad=True)
    w = np.random.default_rng(43).standard_normal((4, 4))

    def loss():
        rng = np.random.default_rng(7)  # same mask on every evaluation
        return sum_all(mul(dropout(x, 0.5, training=True, rng=rng), Tensor(w)))

    assert gradient_rel_error(loss, [x]) <= 1e-6


def test_logsumexp_matches_numpy_reference():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((3, 5)) * 10
    out = logsumexp_rows(Tensor(x))
    ref = np.log(np.exp(x - x.max(-1, keepdims=True)).sum(-1, keepdims=True)) + x.max(-1, keepdims=True)
    np.testing.assert_allclose(out.data, ref, atol=1e-12)


# ---------------------------------------------------------------------------
# backward semantics


def test_backward_linear_case():
    x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    with Tape() as tape:
        tape.backward(sum_all(x))
    np.testing.assert_array_equal(x.grad, np.ones(3))


def test_backward_quadratic_case():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with Tape() as tape:
        tape.backward(sum_all(mul(x, x)))
    np.testing.assert_array_equal(x.grad, [2.0, 4.0])


def test_backward_twice_without_reset_raises():
    x = Tensor([1.0], requires_grad=True)
    with Tape() as tape:
        loss = sum_all(x)
        tape.backward(loss)
        with pytest.raises(TapeError):
            tape.backward(loss)


def test_backward_after_reset_is_allowed():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with Tape() as tape:
        tape.backward(sum_all(x))
        tape.reset()
        tape.backward(sum_all(mul(x, x)))
    # gradients accumulate across passes until zero_grad
    np.testing.assert_array_equal(x.grad, [3.0, 5.0])


def test_backward_non_scalar_loss_raises():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with Tape() as tape:
        y = mul(x, x)
        with pytest.raises(TapeError):
            tape.backward(y)


def test_grads_add_across_multiple_uses_in_one_graph():
    x = Tensor([2.0], requires_grad=True)
    with Tape() as tape:
        tape.backward(sum_all(add(mul(x, x), x)))  # d/dx (x^2 + x) = 2x + 1
    np.testing.assert_array_equal(x.grad, [5.0])


def test_forward_is_bitwise_deterministic():
    rng = np.random.default_rng(11)
    x = Tensor(rng.standard_normal((8, 8)))
    w = Tensor(rng.standard_normal((8, 8)))
    a = softmax_rows(matmul(x, w)).data
    b = softmax_rows(matmul(x, w)).data
    assert np.array_equal(a, b)


def test_detach_blocks_gradient():
    x = Tensor([3.0], requires_grad=True)
    with Tape() as tape:
        tape.backward(sum_all(mul(x.detach(), x)))
    np.testing.assert_array_equal(x.grad, [3.0])  # only the attached factor


# ---------------------------------------------------------------------------
# Adam


def test_adam_zero_gradient_zero_decay_is_fixed_point():
    p = Tensor([1.0, -2.0], requires_grad=True)
    state = init_adam_state([p])
    before = p.data.copy()
    adam_step([p], [np.zeros(2)], state, lr=1e-3, weight_decay=0.0)
    np.testing.assert_array_equal(p.data, before)


def test_adam_single_step_hand_computed():
    # g=1: m_hat=1, v_hat=1, step = lr / (1 + eps)
    p = Tensor([0.5], requires_grad=True)
    state = init_adam_state([p])
    adam_step([p], [np.ones(1)], state, lr=1e-3, weight_decay=0.0, betas=(0.9, 0.999), eps=1e-8)
    expected = 0.5 - 1e-3 / (1.0 + 1e-8)
    np.testing.assert_allclose(p.data, [expected], atol=1e-12)
    assert abs((0.5 - p.data[0]) - 1e-3) < 1e-8


def test_adam_none_gradients_skip_parameter():
    p = Tensor([1.0], requires_grad=True)
    q = Tensor([2.0], requires_grad=True)
    state = init_adam_state([p, q])
    adam_step([p, q], [None, np.ones(1)], state, lr=1e-2, weight_decay=0.1)
    np.testing.assert_array_equal(p.data, [1.0])
    assert q.data[0] != 2.0


def test_adam_all_none_gradients_is_noop():
    p = Tensor([1.0], requires_grad=True)
    state = init_adam_state([p])
    adam_step([p], [None], state, lr=1e-2, weight_decay=0.1)
    np.testing.assert_array_equal(p.data, [1.0])
    assert state.step == 0


def test_adam_quadratic_descent_monotone_after_warmup():
    p = Tensor([0.0], requires_grad=True)
    state = init_adam_state([p])
    losses = []
    for _ in range(100):
        with Tape() as tape:
            diff = add(p, Tensor([-3.0]))
            loss = sum_all(mul(diff, diff))
            losses.append(loss.item())
            tape.backward(loss)
        adam_step([p], [p.grad], state, lr=1e-2)
        p.zero_grad()
    assert losses[-1] < losses[0]
    tail = losses[10:]
    assert all(b <= a + 1e-12 for a, b in zip(tail, tail[1:]))


def test_adam_rejects_nonpositive_learning_rate():
    p = Tensor([1.0], requires_grad=True)
    with pytest.raises(ConfigError):
        adam_step([p], [np.ones(1)], init_adam_state([p]), lr=0.0)


def test_adam_state_shape_mismatch():
    p = Tensor([1.0, 2.0], requires_grad=True)
    state = init_adam_state([p])
    with pytest.raises(DimensionError):
        adam_step([p], [np.ones(3)], state, lr=1e-3)


def test_xavier_uniform_bounds():
    rng = np.random.default_rng(0)
    t = xavier_uniform((40, 60), rng)
    limit = np.sqrt(6.0 / 100.0)
    assert t.requires_grad
    assert np.all(np.abs(t.data) <= limit)
