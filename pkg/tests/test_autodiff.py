"""Differentiation engine: op semantics, tape mechanics, finite differences."""

import numpy as np
import pytest

from bidecode import autodiff as ad
from bidecode.autodiff import Tape, Tensor, backward, forward_op, grad_check, no_grad
from bidecode.exceptions import (
    GraphError,
    NonDeterministicError,
    NonFiniteError,
    ShapeMismatchError,
)


def t(values, rg=True):
    return Tensor(np.asarray(values, dtype=np.float64), requires_grad=rg)


def fd_check(fn, tensors, step=1e-5, tol=1e-6):
    """Central finite differences for every entry of every input tensor."""
    with Tape() as tape:
        loss = fn()
    backward(tape, loss)
    for x in tensors:
        flat = x.values.reshape(-1)
        g = x.grad_or_zeros().reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            with no_grad():
                hi = fn().item()
            flat[i] = orig - step
            with no_grad():
                lo = fn().item()
            flat[i] = orig
            num = (hi - lo) / (2 * step)
            # relative comparison with an absolute floor of 1 so that
            # near-zero gradients are held to |diff| < tol instead
            assert abs(g[i] - num) / max(abs(g[i]), abs(num), 1.0) < tol


# ---------------------------------------------------------------------------
# forward values


def test_tanh_zero_vector():
    out = forward_op("tanh", [t(np.zeros(5))])
    assert np.array_equal(out.values, np.zeros(5))


def test_softmax_uniform():
    out = forward_op("softmax", [t(np.zeros(4))])
    assert np.allclose(out.values, 0.25, atol=1e-15)


def test_matmul_hand_oracle():
    a = t([[1.0, 2, 3], [4, 5, 6]])
    b = t([[1.0, 2], [3, 4], [5, 6]])
    out = forward_op("matmul", [a, b])
    assert np.array_equal(out.values, [[22.0, 28], [49, 64]])


def test_softmax_rows_simplex():
    rng = np.random.default_rng(0)
    out = ad.softmax(t(rng.normal(size=(6, 9)) * 30))
    assert np.all(out.values >= 0)
    assert np.allclose(out.values.sum(axis=1), 1.0, atol=1e-9)


def test_concat_slice_roundtrip():
    a, b = t([1.0, 2]), t([3.0, 4, 5])
    cat = ad.concat([a, b])
    assert np.array_equal(cat.values, [1, 2, 3, 4, 5])
    m = t(np.arange(12.0).reshape(4, 3))
    row = ad.slice_rows(m, 2, 3, squeeze=True)
    assert np.array_equal(row.values, [6, 7, 8])


def test_conv1d_same_matches_numpy_convolve():
    rng = np.random.default_rng(1)
    sig = t(rng.normal(size=7))
    filt = t(rng.normal(size=(3, 5)))
    out = ad.conv1d_same(sig, filt)
    for k in range(3):
        # correlation with same padding == np.convolve of the flipped filter
        ref = np.convolve(sig.values, filt.values[k][::-1], mode="same")
        assert np.allclose(out.values[:, k], ref, atol=1e-12)


def test_mse_and_sum_values():
    a, b = t([1.0, 3.0]), t([0.0, 0.0])
    assert forward_op("mse", [a, b]).item() == pytest.approx(5.0)
    assert forward_op("sum", [a]).item() == pytest.approx(4.0)
    assert forward_op("scale", [a], c=2.0).values.tolist() == [2.0, 6.0]


def test_forward_op_rejects_unknown_kind_and_nonfinite():
    with pytest.raises(ShapeMismatchError):
        forward_op("qr", [t([1.0])])
    with pytest.raises(NonFiniteError):
        forward_op("tanh", [t([np.nan])])


def test_shape_mismatch_reports_op():
    with pytest.raises(ShapeMismatchError):
        ad.add(t(np.zeros(3)), t(np.zeros(4)))
    with pytest.raises(ShapeMismatchError):
        ad.matmul(t(np.zeros((2, 3))), t(np.zeros((2, 3))))


def test_forward_deterministic_bitwise():
    rng = np.random.default_rng(2)
    x = t(rng.normal(size=(4, 4)))
    one = ad.tanh(ad.matmul(x, x)).values
    two = ad.tanh(ad.matmul(x, x)).values
    assert np.array_equal(one, two)


# ---------------------------------------------------------------------------
# backward


def test_sum_grad_all_ones():
    x = t(np.arange(6.0).reshape(2, 3))
    with Tape() as tape:
        loss = ad.sum_all(x)
    backward(tape, loss)
    assert np.array_equal(x.grad, np.ones((2, 3)))


def test_mse_self_grad_zero():
    x = t([1.0, -2.0, 3.0])
    with Tape() as tape:
        loss = ad.mse(x, x)
    backward(tape, loss)
    assert np.array_equal(x.grad, np.zeros(3))


def test_mse_tanh_matmul_fd():
    rng = np.random.default_rng(3)
    W = t(rng.normal(size=(3, 3)))
    v = t(rng.normal(size=3), rg=False)
    tgt = t(rng.normal(size=3), rg=False)
    fd_check(lambda: ad.mse(ad.tanh(ad.matmul(W, v)), tgt), [W])


@pytest.mark.parametrize(
    "build",
    [
        lambda a, b: ad.add(a, b),
        lambda a, b: ad.mul(a, b),
        lambda a, b: ad.scale(a, -1.7),
        lambda a, b: ad.tanh(a),
        lambda a, b: ad.sigmoid(a),
        lambda a, b: ad.relu(ad.add(a, t([0.1] * 5, rg=False))),
        lambda a, b: ad.softmax(a),
        lambda a, b: ad.mse(a, b),
        lambda a, b: ad.concat([a, b]),
        lambda a, b: ad.bce_logits(a, Tensor(np.array([0, 1, 0, 1, 0.0]))),
    ],
)
def test_per_op_finite_difference(build):
    rng = np.random.default_rng(4)
    a = t(rng.normal(size=5))
    b = t(rng.normal(size=5))
    out = build(a, b)
    v = Tensor(rng.normal(size=out.size))
    if out.size > 1:
        fd_check(lambda: ad.mse(build(a, b), v), [a, b])
    else:
        fd_check(lambda: build(a, b), [a, b])


def test_matmul_conv_slice_finite_difference():
    rng = np.random.default_rng(5)
    A = t(rng.normal(size=(3, 4)))
    B = t(rng.normal(size=(4, 2)))
    tgt = Tensor(rng.normal(size=6))

    def fn():
        flat = ad.concat([ad.slice_rows(ad.matmul(A, B), i, i + 1, squeeze=True)
                          for i in range(3)])
        return ad.mse(flat, tgt)

    fd_check(fn, [A, B])

    sig = t(rng.normal(size=6))
    filt = t(rng.normal(size=(2, 3)))
    tgt2 = Tensor(rng.normal(size=6))

    def fn2():
        c = ad.conv1d_same(sig, filt)
        rows = [ad.slice_rows(c, i, i + 1, squeeze=True) for i in range(6)]
        return ad.mse(ad.concat([ad.sum_all(r) for r in rows]), tgt2)

    fd_check(fn2, [sig, filt])


def test_grad_accumulates_across_uses():
    x = t([1.0, 2.0])
    with Tape() as tape:
        loss = ad.sum_all(ad.add(x, x))
    backward(tape, loss)
    assert np.array_equal(x.grad, [2.0, 2.0])


def test_backward_errors():
    x = t([1.0, 2.0])
    with pytest.raises(GraphError):
        backward(Tape(), Tensor(np.array(1.0)))
    with Tape() as tape:
        y = ad.add(x, x)
    with pytest.raises(GraphError):
        backward(tape, y)  # non-scalar loss


def test_no_grad_suppresses_recording():
    x = t([1.0])
    with Tape() as tape:
        with no_grad():
            y = ad.tanh(x)
    assert tape.nodes == []
    assert not y.requires_grad


# ---------------------------------------------------------------------------
# grad_check harness


def test_grad_check_constant_fn_passes():
    p = {"w": t([1.0, 2.0])}
    rep = grad_check(lambda: ad.sum_all(Tensor(np.array([3.0]))), p)
    assert rep["passed"] and rep["max_rel_error"] == 0.0


def test_grad_check_random_quadratic_passes():
    rng = np.random.default_rng(6)
    w = t(rng.normal(size=(2, 3)))
    tgt = Tensor(rng.normal(size=2))
    v = Tensor(rng.normal(size=3))
    rep = grad_check(lambda: ad.mse(ad.tanh(ad.matmul(w, v)), tgt), {"w": w})
    assert rep["passed"]


def test_grad_check_rejects_nondeterministic_fn():
    state = {"n": 0.0}

    def fn():
        state["n"] += 1.0
        return ad.sum_all(Tensor(np.array([state["n"]])))

    with pytest.raises(NonDeterministicError):
        grad_check(fn, {"w": t([1.0])})


def test_grad_check_rejects_bad_step():
    with pytest.raises(ValueError):
        grad_check(lambda: ad.sum_all(t([1.0])), {}, step=0.0)
