"""Training objectives: standard loss and the two agreement regularizers.

* ``model_agreement_loss`` ties two full directional models together by an
  L2 penalty between their predicted trajectories (one model frozen as a
  helper).
* ``decoder_reg_loss`` ties the two decoders of a shared-encoder model
  together by the mean squared distance between their hidden states at
  matching target positions (``omega``).
"""

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import model as M
from .autodiff import Tensor
from .exceptions import FrozenParameterError, ShapeMismatchError

METHODS = ("baseline", "model_reg", "decoder_reg")
AGREEMENT_MODES = ("teacher_forced", "free_run_pseudo")
FREEZE_CHOICES = ("none", "forward", "backward")


@dataclass
class TrainConfig:
    method: str = "baseline"
    lambda_: float = 1.0
    learning_rate: float = 1e-3
    decay_after_steps: int = 1000
    decay_factor: float = 0.9995
    pretrain_steps: int = 500
    joint_iterations: int = None  # default depends on method: 1 / 5
    steps_per_iteration: int = 500
    total_steps: int = 1000  # baseline-only
    batch_size: int = 4
    seed: int = 0
    scheduled_sampling_p: float = 0.0
    agreement_mode: str = "teacher_forced"

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.lambda_ < 0:
            raise ValueError("lambda must be nonnegative")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not (0 < self.decay_factor <= 1):
            raise ValueError("decay_factor must be in (0, 1]")
        if not (0 <= self.scheduled_sampling_p <= 1):
            raise ValueError("scheduled_sampling_p must be in [0, 1]")
        if self.agreement_mode not in AGREEMENT_MODES:
            raise ValueError(f"unknown agreement_mode {self.agreement_mode!r}")
        for name in ("pretrain_steps", "steps_per_iteration", "total_steps", "batch_size"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.joint_iterations is None:
            self.joint_iterations = 5 if self.method == "decoder_reg" else 1
        if self.scheduled_sampling_p > 0 and self.method != "baseline":
            raise ValueError("scheduled sampling is a baseline-only comparison flag")


@dataclass
class LossBreakdown:
    standard_forward: float = 0.0
    standard_backward: float = 0.0
    regularization: float = 0.0
    lambda_: float = 0.0
    total: float = 0.0
    total_tensor: object = field(default=None, repr=False)

    def recomposed(self):
        return (
            self.standard_forward
            + self.standard_backward
            + self.lambda_ * self.regularization
        )


def _stop_targets(length, direction):
    """1 at the final generated step: last position forward, first backward."""
    t = np.zeros(length)
    t[-1 if direction == M.FORWARD else 0] = 1.0
    return Tensor(t)


def standard_loss(pass_result, y, return_parts=False):
    """Frame MSE over all T'xD entries plus stop-head BCE (weight 1.0)."""
    if len(pass_result) != len(y):
        raise ShapeMismatchError(
            f"pass length {len(pass_result)} vs target length {len(y)}"
        )
    pred = pass_result.frames_tensor()
    frame_term = ad.mse(pred, Tensor(y.frames.reshape(-1)))
    logits = ad.concat(pass_result.stop_logits)
    stop_term = ad.bce_logits(logits, _stop_targets(len(y), pass_result.direction))
    total = ad.add(frame_term, stop_term)
    if return_parts:
        return total, frame_term, stop_term
    return total


def agreement_term(pred, pseudo):
    """Mean squared difference between two equally-long frame stacks."""
    return ad.mse(pred, pseudo)


def _assert_frozen(fixed_model):
    hot = [k for k, t in fixed_model.named_params().items() if t.requires_grad]
    if hot:
        raise FrozenParameterError(
            f"helper model must be frozen; trainable: {hot[:3]}..."
        )


def _pseudo_target(fixed_rev_model, x, y, cfg):
    """Position-ordered prediction of the frozen helper model (no grad)."""
    with ad.no_grad():
        if cfg.agreement_mode == "teacher_forced":
            helper = M.teacher_forced_pass(fixed_rev_model, x, y)
            return helper.frames_matrix()  # already stored by position
        out = M.free_run_decode(fixed_rev_model, x, max_len=len(y), stop_threshold=1.0)
        frames = out.frames_matrix()
        if fixed_rev_model.direction == M.BACKWARD:
            frames = frames[::-1]  # decoding order -> absolute positions
        return frames


def model_agreement_loss(fwd_model, fixed_rev_model, x, y, cfg):
    """Standard loss of the trained model plus lambda * L2 to the frozen
    helper's position-ordered prediction."""
    _assert_frozen(fixed_rev_model)
    pseudo = _pseudo_target(fixed_rev_model, x, y, cfg)

    result = M.teacher_forced_pass(fwd_model, x, y)
    std = standard_loss(result, y)

    n = min(len(result), pseudo.shape[0])
    pred = ad.concat(result.frames[:n])
    reg = agreement_term(pred, Tensor(pseudo[:n].reshape(-1)))
    total = ad.add(std, ad.scale(reg, cfg.lambda_))

    bd = LossBreakdown(lambda_=cfg.lambda_, total=total.item(), total_tensor=total)
    bd.regularization = reg.item()
    if fwd_model.direction == M.FORWARD:
        bd.standard_forward = std.item()
    else:
        bd.standard_backward = std.item()
    return bd


def omega(states_fwd, states_bwd):
    """Mean over positions of the squared distance between forward and
    backward decoder states: (1/T') sum_t ||s_fwd_t - s_bwd_t||^2."""
    if len(states_fwd) != len(states_bwd):
        raise ShapeMismatchError(
            f"state lists differ in length: {len(states_fwd)} vs {len(states_bwd)}"
        )
    diffs = []
    for sf, sb in zip(states_fwd, states_bwd):
        hf = sf.h if isinstance(sf, M.DecoderState) else sf
        hb = sb.h if isinstance(sb, M.DecoderState) else sb
        if hf.shape != hb.shape:
            raise ShapeMismatchError(f"state dims differ: {hf.shape} vs {hb.shape}")
        diffs.append(ad.add(hf, ad.scale(hb, -1.0)))
    cat = ad.concat(diffs)
    return ad.scale(ad.sum_all(ad.mul(cat, cat)), 1.0 / len(states_fwd))


def decoder_reg_loss(bimodel, x, y, cfg, freeze="none", include_omega=True):
    """Twin-decoder objective:
    L(forward) + L(backward) + lambda * omega.

    With freeze="backward" the backward branch runs detached: its
    parameters get no gradient and the shared encoder only receives
    gradients through the forward branch, while omega still pulls forward
    states toward the (constant) backward states. Symmetric for
    freeze="forward".
    """
    if freeze not in FREEZE_CHOICES:
        raise ValueError(f"freeze must be one of {FREEZE_CHOICES}")
    hidden = M.encode(bimodel, x)

    def branch(dec_stack, detached):
        if detached:
            with ad.no_grad():
                enc = M.make_encoder_output(dec_stack, hidden)
                res = M.run_teacher_forced(dec_stack, enc, y)
                std = standard_loss(res, y)
        else:
            enc = M.make_encoder_output(dec_stack, hidden)
            res = M.run_teacher_forced(dec_stack, enc, y)
            std = standard_loss(res, y)
        return res, std

    res_f, std_f = branch(bimodel.forward_decoder, freeze == "forward")
    res_b, std_b = branch(bimodel.backward_decoder, freeze == "backward")

    total = ad.add(std_f, std_b)
    reg_value = 0.0
    if include_omega:
        om = omega(res_f.states, res_b.states)
        reg_value = om.item()
        total = ad.add(total, ad.scale(om, cfg.lambda_))

    return LossBreakdown(
        standard_forward=std_f.item(),
        standard_backward=std_b.item(),
        regularization=reg_value,
        lambda_=cfg.lambda_,
        total=total.item(),
        total_tensor=total,
    )
