import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fna.autodiff import (
    SGD,
    Adam,
    BatchNormParams,
    NonFiniteError,
    ShapeError,
    Tensor,
    TapeError,
    adam_step,
    backward,
    no_grad,
    sgd_step,
)
from fna.autodiff import functional as F
from fna.autodiff.gradcheck import check_gradients, numeric_grad, relative_error
from grad_cases import CASES, case_seed


def t(a, grad=False, dtype=np.float32):
    return Tensor(np.asarray(a, dtype=dtype), requires_grad=grad, dtype=dtype)


# -- forward examples -------------------------------------------------------

def test_conv2d_pointwise_scaling():
    out = F.conv2d(t(np.ones((1, 1, 3, 3))), t([[[[2.0]]]]))
    np.testing.assert_array_equal(out.data, np.full((1, 1, 3, 3), 2.0))


def test_conv2d_box_sum_with_padding():
    out = F.conv2d(t(np.ones((1, 1, 3, 3))), t(np.ones((1, 1, 3, 3))), stride=1, padding=1).data[0, 0]
    assert out[1, 1] == 9.0
    assert out[0, 0] == out[0, 2] == out[2, 0] == out[2, 2] == 4.0
    assert out[0, 1] == out[1, 0] == out[1, 2] == out[2, 1] == 6.0


def test_conv2d_zero_kernel():
    rng = np.random.default_rng(0)
    out = F.conv2d(t(rng.normal(size=(2, 3, 6, 6))), t(np.zeros((4, 3, 3, 3))), stride=2, padding=1)
    assert out.shape == (2, 4, 3, 3)
    assert not out.data.any()


def test_conv2d_errors():
    with pytest.raises(ShapeError):
        F.conv2d(t(np.ones((1, 2, 4, 4))), t(np.ones((1, 3, 3, 3))))
    with pytest.raises(ShapeError):
        F.conv2d(t(np.ones((1, 1, 4, 4))), t(np.ones((1, 1, 3, 1))))


def test_conv2d_matches_direct_loops():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(2, 3, 7, 7))
    w = rng.normal(size=(4, 3, 3, 3))
    for stride, pad in [(1, 0), (1, 1), (2, 1), (2, 0)]:
        got = F.conv2d(t(x, dtype=np.float64), t(w, dtype=np.float64), stride, pad).data
        xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
        ho = (7 + 2 * pad - 3) // stride + 1
        ref = np.zeros((2, 4, ho, ho))
        for n in range(2):
            for o in range(4):
                for i in range(ho):
                    for j in range(ho):
                        ref[n, o, i, j] = np.sum(xp[n, :, i * stride:i * stride + 3, j * stride:j * stride + 3] * w[o])
        np.testing.assert_allclose(got, ref, rtol=1e-12, atol=1e-12)


def test_depthwise_identity_kernel():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(1, 2, 5, 5)).astype(np.float32)
    w = np.zeros((2, 1, 3, 3), np.float32)
    w[:, 0, 1, 1] = 1
    np.testing.assert_array_equal(F.depthwise_conv2d(t(x), t(w), 1, 1).data, x)


def test_depthwise_separability():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(1, 2, 5, 5)).astype(np.float32)
    w = np.zeros((2, 1, 3, 3), np.float32)
    w[1, 0, 1, 1] = 1
    out = F.depthwise_conv2d(t(x), t(w), 1, 1).data
    assert not out[:, 0].any()
    np.testing.assert_array_equal(out[:, 1], x[:, 1])


def test_depthwise_matches_grouped_conv():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(2, 3, 9, 9))
    w = rng.normal(size=(3, 1, 5, 5))
    for stride in (1, 2):
        got = F.depthwise_conv2d(t(x, dtype=np.float64), t(w, dtype=np.float64), stride, 2).data
        for c in range(3):
            ref = F.conv2d(t(x[:, c:c + 1], dtype=np.float64), t(w[c:c + 1], dtype=np.float64), stride, 2).data
            np.testing.assert_allclose(got[:, c:c + 1], ref, rtol=1e-12, atol=1e-12)


def test_batch_norm_identity_normalization():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(4, 3, 5, 5))
    x = (x - x.mean(axis=(0, 2, 3), keepdims=True)) / x.std(axis=(0, 2, 3), keepdims=True)
    bn = BatchNormParams.init(3, dtype=np.float64, eps=1e-12)
    out = F.batch_norm(t(x, dtype=np.float64), bn, training=True).data
    np.testing.assert_allclose(out, x, atol=1e-5)


def test_batch_norm_affine_form():
    rng = np.random.default_rng(6)
    x = rng.normal(size=(4, 2, 3, 3))
    bn = BatchNormParams.init(2, dtype=np.float64)
    xhat = F.batch_norm(t(x, dtype=np.float64), bn.copy(), training=True).data
    bn.gamma.data[:] = 2.0
    bn.beta.data[:] = 3.0
    out = F.batch_norm(t(x, dtype=np.float64), bn, training=True).data
    np.testing.assert_array_equal(out, 2.0 * xhat + 3.0)


def test_batch_norm_eval_mode_substitution():
    x = np.random.default_rng(7).normal(size=(2, 3, 4, 4)).astype(np.float32)
    bn = BatchNormParams.init(3)
    out = F.batch_norm(t(x), bn, training=False).data
    np.testing.assert_allclose(out, x / np.sqrt(1 + 1e-5), rtol=1e-6)


def test_batch_norm_running_stats_and_channel_check():
    x = np.random.default_rng(8).normal(2.0, 3.0, size=(8, 2, 4, 4))
    bn = BatchNormParams.init(2, dtype=np.float64)
    F.batch_norm(t(x, dtype=np.float64), bn, training=True)
    np.testing.assert_allclose(bn.running_mean, 0.1 * x.mean(axis=(0, 2, 3)))
    np.testing.assert_allclose(bn.running_var, 0.9 + 0.1 * x.var(axis=(0, 2, 3), ddof=1))
    before = bn.running_mean.copy()
    F.batch_norm(t(x, dtype=np.float64), bn, training=True, update_stats=False)
    np.testing.assert_array_equal(bn.running_mean, before)
    with pytest.raises(ShapeError):
        F.batch_norm(t(np.ones((1, 3, 2, 2))), bn, training=True)


def test_batch_norm_constant_input_is_finite():
    bn = BatchNormParams.init(1)
    out = F.batch_norm(t(np.full((2, 1, 3, 3), 4.0)), bn, training=True)
    assert np.all(np.isfinite(out.data)) and not out.data.any()


def test_batch_norm_params_invariants():
    with pytest.raises(ShapeError):
        BatchNormParams(t(np.ones(3)), t(np.ones(2)), np.zeros(3), np.ones(3))
    with pytest.raises(ValueError):
        BatchNormParams(t(np.ones(2)), t(np.ones(2)), np.zeros(2), np.ones(2), eps=0.0)


def test_relu6_softmax_cross_entropy_examples():
    np.testing.assert_array_equal(F.relu6(t([7.0, -1.0, 3.0])).data, [6.0, 0.0, 3.0])
    np.testing.assert_allclose(F.softmax(t(np.full(4, 1.5)), axis=0).data, np.full(4, 0.25))
    assert float(F.cross_entropy(t([[1e4, 0.0, 0.0]]), np.array([0])).data) == pytest.approx(0.0, abs=1e-6)


def test_cross_entropy_per_pixel_and_errors():
    rng = np.random.default_rng(9)
    logits = rng.normal(size=(2, 4, 3, 3))
    y = rng.integers(0, 4, size=(2, 3, 3))
    got = float(F.cross_entropy(t(logits, dtype=np.float64), y).data)
    lp = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
    ref = -np.mean(np.take_along_axis(lp, y[:, None], axis=1))
    assert got == pytest.approx(ref, rel=1e-12)
    with pytest.raises(IndexError):
        F.cross_entropy(t(np.zeros((1, 3))), np.array([3]))
    with pytest.raises(TypeError):
        F.cross_entropy(t(np.zeros((1, 3))), np.array([0.5]))


def test_global_pool_linear_upsample():
    x = np.arange(16, dtype=np.float32).reshape(1, 1, 4, 4)
    assert F.global_avg_pool(t(x)).data[0, 0] == 7.5
    out = F.linear(t([[1.0, 2.0]]), t([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]), t([0.0, 0.0, 1.0]))
    np.testing.assert_array_equal(out.data, [[1.0, 2.0, 4.0]])
    up = F.upsample_nearest(t(np.array([[[[1.0, 2.0], [3.0, 4.0]]]])), 2).data[0, 0]
    np.testing.assert_array_equal(up, [[1, 1, 2, 2], [1, 1, 2, 2], [3, 3, 4, 4], [3, 3, 4, 4]])


# -- tape -------------------------------------------------------------------

def test_linear_function_gradient():
    x = np.array([1.0, -2.0, 3.0], np.float32)
    w = t(np.zeros(3), grad=True)
    backward(F.sum(w * t(x)))
    np.testing.assert_array_equal(w.grad, x)


def test_second_backward_on_consumed_tape_raises():
    w = t([1.0, 2.0], grad=True)
    loss = F.sum(w * w)
    backward(loss)
    with pytest.raises(TapeError):
        backward(loss)


def test_backward_needs_scalar_on_tape():
    w = t([1.0, 2.0], grad=True)
    with pytest.raises(TapeError):
        backward(w * 2.0)
    with pytest.raises(TapeError):
        backward(F.sum(t([1.0, 2.0])))


def test_non_finite_loss_is_an_error():
    w = t([0.0], grad=True)
    with pytest.raises(NonFiniteError):
        with np.errstate(divide="ignore"):
            backward(F.sum(F.log(w)))


def test_shared_subexpression_visited_once():
    w = t([3.0], grad=True)
    h = w * w
    backward(F.sum(h + h * h))          # d/dw (w^2 + w^4) = 2w + 4w^3
    assert w.grad[0] == pytest.approx(2 * 3 + 4 * 27)


def test_tape_is_topological():
    w = t([1.0, 2.0], grad=True)
    a = w * 2.0
    b = a + w
    loss = F.sum(b * a)
    tape = backward(loss)
    pos = {id(x): i for i, x in enumerate(tape.order)}
    for x in tape.order:
        node = x._node
        for p in getattr(node, "parents", ()):
            if id(p) in pos:
                assert pos[id(p)] < pos[id(x)]
    assert len(set(pos)) == len(tape.order)


def test_no_grad_records_nothing():
    w = t([1.0], grad=True)
    with no_grad():
        y = w * 2.0
    assert y._node is None and not y.requires_grad


def test_grads_accumulate_on_leaves():
    w = t([1.0], grad=True)
    backward(F.sum(w * 2.0))
    backward(F.sum(w * 3.0))
    assert w.grad[0] == 5.0


# -- gradient checks (float64 reference path) ----------------------------------

@pytest.mark.parametrize("name", sorted(CASES))
def test_gradcheck_float64(name):
    inputs, fn = CASES[name](np.random.default_rng(case_seed(name)), np.float64)
    errors = check_gradients(fn, inputs)
    assert max(errors) < 1e-6, (name, errors)


@pytest.mark.parametrize("name", sorted(CASES))
def test_gradcheck_float32_against_float64_reference(name):
    inputs, fn = CASES[name](np.random.default_rng(case_seed(name)), np.float32)
    ref_inputs, ref_fn = CASES[name](np.random.default_rng(case_seed(name)), np.float64)
    errors = check_gradients(fn, inputs, reference=ref_fn, reference_inputs=ref_inputs)
    assert max(errors) < 1e-3, (name, errors)


def test_numeric_grad_restores_input():
    x = Tensor(np.random.default_rng(11).normal(size=4), requires_grad=True, dtype=np.float64)
    before = x.data.copy()
    numeric_grad(lambda: F.sum(F.exp(x)), x)
    np.testing.assert_array_equal(x.data, before)


def test_relative_error_zero_case():
    assert relative_error(np.zeros(3), np.zeros(3)) == 0.0


# -- optimizers -------------------------------------------------------------

def test_sgd_vanilla_step():
    p = np.array([1.0])
    sgd_step([p], [np.array([1.0])], lr=0.1)
    assert p[0] == pytest.approx(0.9)


def test_sgd_momentum_two_steps():
    p, state = np.array([1.0]), {}
    sgd_step([p], [np.array([1.0])], lr=0.1, momentum=0.9, state=state)
    before = p[0]
    sgd_step([p], [np.array([1.0])], lr=0.1, momentum=0.9, state=state)
    assert state[0][0] == pytest.approx(1.9)
    assert before - p[0] == pytest.approx(0.19)


def test_adam_zero_grad_keeps_param():
    p = np.array([0.7, -1.2])
    adam_step([p], [np.zeros(2)], lr=1e-3)
    np.testing.assert_array_equal(p, [0.7, -1.2])


def test_optimizers_reject_nonpositive_lr():
    with pytest.raises(ValueError):
        sgd_step([np.zeros(1)], [np.zeros(1)], lr=0.0)
    with pytest.raises(ValueError):
        adam_step([np.zeros(1)], [np.zeros(1)], lr=-1.0)
    with pytest.raises(ValueError):
        SGD([], lr=0.0)


def test_optimizer_classes_match_functional_forms():
    rng = np.random.default_rng(12)
    grads = [rng.normal(size=3) for _ in range(3)]
    a = Tensor(np.ones(3), True, np.float64)
    b, state = np.ones(3), {}
    opt = SGD([a], lr=0.05, momentum=0.9, weight_decay=1e-3)
    for g in grads:
        a.grad = g
        opt.step()
        sgd_step([b], [g], lr=0.05, momentum=0.9, weight_decay=1e-3, state=state)
    np.testing.assert_allclose(a.data, b, rtol=1e-12)
    a = Tensor(np.ones(3), True, np.float64)
    b, state = np.ones(3), {}
    opt = Adam([a], lr=0.01, weight_decay=1e-3)
    for g in grads:
        a.grad = g
        opt.step()
        adam_step([b], [g], lr=0.01, weight_decay=1e-3, state=state)
    np.testing.assert_allclose(a.data, b, rtol=1e-12)


def test_optimizer_skips_params_without_grad():
    a, b = Tensor(np.ones(2), True), Tensor(np.ones(2), True)
    opt = SGD([a, b], lr=0.1, momentum=0.9, weight_decay=0.1)
    a.grad = np.ones(2, np.float32)
    opt.step()
    np.testing.assert_array_equal(b.data, np.ones(2))
    assert not np.array_equal(a.data, np.ones(2))


# -- properties -------------------------------------------------------------

@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31), a=st.floats(-3, 3), b=st.floats(-3, 3),
       k=st.sampled_from([1, 3, 5]), stride=st.sampled_from([1, 2]))
def test_conv2d_is_linear_in_input(seed, a, b, k, stride):
    rng = np.random.default_rng(seed)
    x, y = rng.normal(size=(2, 2, 6, 6)), rng.normal(size=(2, 2, 6, 6))
    w = t(rng.normal(size=(3, 2, k, k)), dtype=np.float64)
    pad = (k - 1) // 2
    lhs = F.conv2d(t(a * x + b * y, dtype=np.float64), w, stride, pad).data
    rhs = a * F.conv2d(t(x, dtype=np.float64), w, stride, pad).data + b * F.conv2d(t(y, dtype=np.float64), w, stride, pad).data
    np.testing.assert_allclose(lhs, rhs, atol=1e-5)


@settings(max_examples=40, deadline=None)
@given(n=st.integers(1, 3), c=st.integers(1, 4), h=st.integers(3, 9), w=st.integers(3, 9),
       k=st.sampled_from([1, 3, 5]), stride=st.sampled_from([1, 2]), pad=st.integers(0, 2))
def test_conv_shape_functions_match_data(n, c, h, w, k, stride, pad):
    if h + 2 * pad < k or w + 2 * pad < k:
        return
    x = t(np.ones((n, c, h, w)))
    out = F.conv2d(x, t(np.ones((2, c, k, k))), stride, pad)
    assert out.shape == F.conv2d_output_shape(x.shape, (2, c, k, k), stride, pad)
    dw = F.depthwise_conv2d(x, t(np.ones((c, 1, k, k))), stride, pad)
    assert dw.shape == (n, c) + F.conv2d_output_hw(h, w, k, stride, pad)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_forward_backward_bit_deterministic(seed):
    def run():
        rng = np.random.default_rng(seed)
        x = Tensor(rng.normal(size=(2, 4, 6, 6)), dtype=np.float32)
        w = Tensor(rng.normal(size=(4, 1, 3, 3)), True, np.float32)
        bn = BatchNormParams.init(4)
        y = F.relu6(F.batch_norm(F.depthwise_conv2d(x, w, 1, 1), bn, True))
        loss = F.sum(y * y)
        backward(loss)
        return loss.data.tobytes(), w.grad.tobytes(), bn.gamma.grad.tobytes(), bn.running_var.tobytes()
    assert run() == run()


@settings(max_examples=30, deadline=None)
@given(logits=st.lists(st.floats(-20, 20), min_size=2, max_size=7))
def test_softmax_normalizes(logits):
    p = F.softmax(t(logits, dtype=np.float64), axis=0).data
    assert p.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(p >= 0)
