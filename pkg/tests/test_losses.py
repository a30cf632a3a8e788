"""Objectives: standard loss, agreement penalty, state regularizer."""

import numpy as np
import pytest

from bidecode import autodiff as ad
from bidecode import losses as L
from bidecode import model as M
from bidecode.autodiff import Tape, Tensor, backward
from bidecode.exceptions import FrozenParameterError, ShapeMismatchError
from bidecode.model import (
    BACKWARD,
    FORWARD,
    BiDecoderModel,
    DirectionalModel,
    FeatureSequence,
    SymbolSequence,
    teacher_forced_pass,
)


# ---------------------------------------------------------------------------
# TrainConfig


def test_config_defaults_per_method():
    assert L.TrainConfig(method="decoder_reg").joint_iterations == 5
    assert L.TrainConfig(method="model_reg").joint_iterations == 1
    assert L.TrainConfig(method="decoder_reg", joint_iterations=3).joint_iterations == 3


@pytest.mark.parametrize(
    "kw",
    [
        {"method": "nope"},
        {"lambda_": -0.5},
        {"learning_rate": 0.0},
        {"decay_factor": 0.0},
        {"decay_factor": 1.5},
        {"scheduled_sampling_p": 1.5},
        {"agreement_mode": "psychic"},
        {"batch_size": -1},
        {"method": "decoder_reg", "scheduled_sampling_p": 0.5},
    ],
)
def test_config_validation(kw):
    with pytest.raises(ValueError):
        L.TrainConfig(**kw)


# ---------------------------------------------------------------------------
# standard loss


def _tf(model, x, y):
    return teacher_forced_pass(model, x, y)


def test_standard_loss_perfect_frames(toy_dims, toy_pair):
    x, y = toy_pair
    m = DirectionalModel(toy_dims, FORWARD, seed=0)
    res = _tf(m, x, y)
    # overwrite predictions with the targets and the stop logits with
    # confident values; the frame term must vanish
    for t in range(len(y)):
        res.frames[t] = Tensor(y.frames[t])
    total, frame_term, stop_term = L.standard_loss(res, y, return_parts=True)
    assert frame_term.item() == pytest.approx(0.0, abs=1e-15)
    assert total.item() == pytest.approx(stop_term.item(), abs=1e-15)


def test_standard_loss_constant_offset(toy_dims, toy_pair):
    x, y = toy_pair
    m = DirectionalModel(toy_dims, FORWARD, seed=0)
    res = _tf(m, x, y)
    c = 0.37
    for t in range(len(y)):
        res.frames[t] = Tensor(y.frames[t] + c)
    _, frame_term, _ = L.standard_loss(res, y, return_parts=True)
    assert frame_term.item() == pytest.approx(c * c, abs=1e-12)


def test_standard_loss_matches_recomputation(toy_dims, toy_pair):
    x, y = toy_pair
    m = DirectionalModel(toy_dims, FORWARD, seed=1)
    res = _tf(m, x, y)
    _, frame_term, _ = L.standard_loss(res, y, return_parts=True)
    manual = np.mean((res.frames_matrix() - y.frames) ** 2)
    assert frame_term.item() == pytest.approx(manual, abs=1e-12)


def test_standard_loss_length_mismatch(toy_dims, toy_pair):
    x, y = toy_pair
    m = DirectionalModel(toy_dims, FORWARD, seed=1)
    res = _tf(m, x, y)
    short = FeatureSequence(y.frames[:-1])
    with pytest.raises(ShapeMismatchError):
        L.standard_loss(res, short)


def test_stop_targets_by_direction():
    fwd = L._stop_targets(4, FORWARD).values
    bwd = L._stop_targets(4, BACKWARD).values
    assert fwd.tolist() == [0, 0, 0, 1]
    assert bwd.tolist() == [1, 0, 0, 0]


# ---------------------------------------------------------------------------
# model-level agreement


def _frozen_helper(dims, direction, seed):
    helper = DirectionalModel(dims, direction, seed=seed)
    for s in helper.stacks():
        s.freeze()
    return helper


def test_agreement_lambda_zero_equals_standard(toy_dims, toy_pair):
    x, y = toy_pair
    m = DirectionalModel(toy_dims, FORWARD, seed=2)
    helper = _frozen_helper(toy_dims, BACKWARD, 3)
    cfg = L.TrainConfig(method="model_reg", lambda_=0.0)
    bd = L.model_agreement_loss(m, helper, x, y, cfg)
    std = L.standard_loss(_tf(m, x, y), y)
    assert bd.total == pytest.approx(std.item(), abs=1e-12)


def test_agreement_requires_frozen_helper(toy_dims, toy_pair):
    x, y = toy_pair
    m = DirectionalModel(toy_dims, FORWARD, seed=2)
    hot = DirectionalModel(toy_dims, BACKWARD, seed=3)
    cfg = L.TrainConfig(method="model_reg")
    with pytest.raises(FrozenParameterError):
        L.model_agreement_loss(m, hot, x, y, cfg)


def test_agreement_term_hand_value():
    pred = Tensor(np.full(8, 0.5))
    pseudo = Tensor(np.full(8, 0.25))
    assert L.agreement_term(pred, pseudo).item() == pytest.approx(0.0625, abs=1e-15)


def test_agreement_identical_predictions_zero_reg(toy_dims, toy_pair):
    x, y = toy_pair
    m = DirectionalModel(toy_dims, FORWARD, seed=4)
    helper = _frozen_helper(toy_dims, BACKWARD, 5)
    # mirror the helper's position-ordered prediction into y so both agree
    pseudo = L._pseudo_target(helper, x, y, L.TrainConfig(method="model_reg"))
    cfg = L.TrainConfig(method="model_reg", lambda_=1.0)
    bd = L.model_agreement_loss(m, helper, x, y, cfg)
    n = min(len(y), pseudo.shape[0])
    pred = _tf(m, x, y).frames_matrix()[:n]
    assert bd.regularization == pytest.approx(np.mean((pred - pseudo[:n]) ** 2), abs=1e-12)


def test_agreement_free_run_pseudo_mode(toy_dims, toy_pair):
    x, y = toy_pair
    m = DirectionalModel(toy_dims, FORWARD, seed=4)
    helper = _frozen_helper(toy_dims, BACKWARD, 5)
    cfg = L.TrainConfig(method="model_reg", agreement_mode="free_run_pseudo")
    bd = L.model_agreement_loss(m, helper, x, y, cfg)
    assert np.isfinite(bd.total)
    assert bd.recomposed() == pytest.approx(bd.total, abs=1e-12)


# ---------------------------------------------------------------------------
# omega


def _states(arrs):
    return [Tensor(np.asarray(a, dtype=np.float64)) for a in arrs]


def test_omega_identical_zero():
    s = _states([[1.0, 2.0], [3.0, 4.0]])
    assert L.omega(s, _states([[1.0, 2.0], [3.0, 4.0]])).item() == 0.0


def test_omega_hand_value():
    assert L.omega(_states([[1.0, 0.0]]), _states([[0.0, 1.0]])).item() == pytest.approx(2.0)


def test_omega_matches_recomputation_and_symmetry():
    rng = np.random.default_rng(6)
    a = rng.normal(size=(3, 4))
    b = rng.normal(size=(3, 4))
    got = L.omega(_states(a), _states(b)).item()
    want = np.mean(np.sum((a - b) ** 2, axis=1))
    assert got == pytest.approx(want, abs=1e-12)
    assert got == pytest.approx(L.omega(_states(b), _states(a)).item(), abs=1e-15)
    assert got >= 0


def test_omega_analytic_gradient():
    rng = np.random.default_rng(7)
    a = rng.normal(size=(3, 4))
    b = rng.normal(size=(3, 4))
    sf, sb = _states(a), _states(b)
    for ten in sf + sb:
        ten.requires_grad = True
    with Tape() as tape:
        om = L.omega(sf, sb)
    backward(tape, om)
    T = 3
    for t in range(T):
        closed = (2.0 / T) * (a[t] - b[t])
        assert np.max(np.abs(sf[t].grad - closed)) < 1e-10
        assert np.max(np.abs(sb[t].grad + closed)) < 1e-10


def test_omega_mismatch_errors():
    with pytest.raises(ShapeMismatchError):
        L.omega(_states([[1.0]]), _states([[1.0], [2.0]]))
    with pytest.raises(ShapeMismatchError):
        L.omega(_states([[1.0, 2.0]]), _states([[1.0]]))


# ---------------------------------------------------------------------------
# twin-decoder objective


def test_decoder_reg_breakdown_recomposes(toy_dims, toy_pair):
    x, y = toy_pair
    bm = BiDecoderModel(toy_dims, seed=8)
    cfg = L.TrainConfig(method="decoder_reg", lambda_=1.0)
    bd = L.decoder_reg_loss(bm, x, y, cfg)
    assert bd.total == pytest.approx(bd.recomposed(), abs=1e-12)
    assert bd.regularization > 0


def test_decoder_reg_lambda_zero_no_reg_gradient(toy_dims, toy_pair):
    x, y = toy_pair
    bm = BiDecoderModel(toy_dims, seed=9)
    cfg0 = L.TrainConfig(method="decoder_reg", lambda_=0.0)

    def grads(include_omega):
        for ten in bm.named_params().values():
            ten.zero_grad()
        with Tape() as tape:
            bd = L.decoder_reg_loss(bm, x, y, cfg0, include_omega=include_omega)
        backward(tape, bd.total_tensor)
        return {k: t.grad_or_zeros().copy() for k, t in bm.named_params().items()}

    with_node = grads(True)
    without = grads(False)
    for k in with_node:
        assert np.array_equal(with_node[k], without[k]), k


def test_decoder_reg_frozen_backward_gets_no_gradient(toy_dims, toy_pair):
    x, y = toy_pair
    bm = BiDecoderModel(toy_dims, seed=10)
    cfg = L.TrainConfig(method="decoder_reg", lambda_=1.0)
    bm.backward_decoder.freeze()
    for ten in bm.named_params().values():
        ten.zero_grad()
    with Tape() as tape:
        bd = L.decoder_reg_loss(bm, x, y, cfg, freeze="backward")
    backward(tape, bd.total_tensor)
    for k, ten in bm.backward_decoder.named("decoder_backward.").items():
        assert ten.grad is None or not ten.grad.any(), k
    fwd_nonzero = sum(
        1 for ten in bm.forward_decoder.params.values()
        if ten.grad is not None and ten.grad.any())
    assert fwd_nonzero > 0
    enc_nonzero = sum(
        1 for ten in bm.encoder.params.values()
        if ten.grad is not None and ten.grad.any())
    assert enc_nonzero > 0
    bm.backward_decoder.unfreeze()


def test_decoder_reg_tied_mirror_totals(toy_dims, toy_task):
    """With weight-tied decoders on a palindromic target the two standard
    terms coincide, so total = 2*L(forward) + lambda*omega."""
    x = SymbolSequence([1, 1])
    from bidecode import data as D
    y = D.oracle_render(toy_task, x)
    bm = BiDecoderModel(toy_dims, seed=11)
    for k, ten in bm.forward_decoder.params.items():
        bm.backward_decoder.params[k].values[...] = ten.values
    cfg = L.TrainConfig(method="decoder_reg", lambda_=1.0)
    bd = L.decoder_reg_loss(bm, x, y, cfg)
    assert np.isfinite(bd.total) and np.isfinite(bd.regularization)
    assert bd.total == pytest.approx(
        bd.standard_forward + bd.standard_backward + bd.regularization, abs=1e-12)


def test_decoder_reg_rejects_bad_freeze(toy_dims, toy_pair):
    x, y = toy_pair
    bm = BiDecoderModel(toy_dims, seed=12)
    with pytest.raises(ValueError):
        L.decoder_reg_loss(bm, x, y, L.TrainConfig(method="decoder_reg"), freeze="both")
