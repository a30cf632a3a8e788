"""Deterministic training loops: Adam + the two joint-training schedules.

Both joint schedules follow the same two-phase shape: pre-train with the
standard objective, then alternate short phases where one direction is
frozen as a helper while the other is optimized against it.
"""

import copy

import numpy as np

from . import autodiff as ad
from . import losses as L
from . import model as M
from .exceptions import DivergenceError


class Adam:
    """Adam with exponential learning-rate decay after a step threshold.

    Parameters whose requires_grad flag is off (frozen) are skipped
    entirely: no value update, no moment update.
    """

    def __init__(self, params, learning_rate=1e-3, beta1=0.9, beta2=0.999,
                 eps=1e-8, decay_after_steps=1000, decay_factor=0.9995):
        self.params = dict(params)
        self.lr = learning_rate
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.decay_after = decay_after_steps
        self.decay_factor = decay_factor
        self.t = 0
        self.m = {k: np.zeros_like(p.values) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.values) for k, p in self.params.items()}

    def current_lr(self):
        excess = max(0, self.t - self.decay_after)
        return self.lr * self.decay_factor ** excess

    def step(self):
        self.t += 1
        lr = self.current_lr()
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k, p in self.params.items():
            if not p.requires_grad:
                continue
            g = p.grad if p.grad is not None else np.zeros_like(p.values)
            m = self.m[k]
            v = self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.values -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def moment_arrays(self):
        """Flat name -> array view of optimizer state, for checkpoints."""
        out = {}
        for k in self.params:
            out[f"adam.m.{k}"] = self.m[k]
            out[f"adam.v.{k}"] = self.v[k]
        return out


def make_optimizer(model, cfg):
    return Adam(
        model.named_params(),
        learning_rate=cfg.learning_rate,
        decay_after_steps=cfg.decay_after_steps,
        decay_factor=cfg.decay_factor,
    )


def standard_loss_fn(model, x, y, cfg, rng):
    res = M.teacher_forced_pass(
        model, x, y, sampling_p=cfg.scheduled_sampling_p, rng=rng
    )
    total = L.standard_loss(res, y)
    bd = L.LossBreakdown(total=total.item(), total_tensor=total)
    if model.direction == M.FORWARD:
        bd.standard_forward = bd.total
    else:
        bd.standard_backward = bd.total
    return bd


def train_steps(model, dataset, cfg, loss_fn, n_steps, optimizer=None, rng=None,
                phase="train", log=None, step_hook=None):
    """Run n_steps Adam updates of loss_fn averaged over sampled batches.

    loss_fn(model, x, y, rng) must return a LossBreakdown whose
    total_tensor is on the active tape. Deterministic given rng state.
    """
    optimizer = optimizer or make_optimizer(model, cfg)
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    log = log if log is not None else []
    n_data = len(dataset)
    for step in range(n_steps):
        idx = rng.integers(0, n_data, size=cfg.batch_size)
        agg = L.LossBreakdown(lambda_=cfg.lambda_)
        optimizer.zero_grad()
        with ad.Tape() as tape:
            pieces = []
            for i in idx:
                x, y = dataset[int(i)]
                bd = loss_fn(model, x, y, rng)
                pieces.append(bd.total_tensor)
                agg.standard_forward += bd.standard_forward / cfg.batch_size
                agg.standard_backward += bd.standard_backward / cfg.batch_size
                agg.regularization += bd.regularization / cfg.batch_size
            batch_total = pieces[0]
            for t in pieces[1:]:
                batch_total = ad.add(batch_total, t)
            batch_total = ad.scale(batch_total, 1.0 / cfg.batch_size)
        agg.total = batch_total.item()
        if not np.isfinite(agg.total):
            raise DivergenceError(optimizer.t, f"non-finite loss in phase {phase!r} "
                                               f"at optimizer step {optimizer.t}")
        ad.backward(tape, batch_total)
        optimizer.step()
        log.append({
            "step": optimizer.t,
            "phase": phase,
            "standard_forward": agg.standard_forward,
            "standard_backward": agg.standard_backward,
            "regularization": agg.regularization,
            "lambda": agg.lambda_,
            "total": agg.total,
        })
        if step_hook is not None:
            step_hook(optimizer.t, agg)
    return log


def _frozen(stacks):
    class _Ctx:
        def __enter__(self):
            for s in stacks:
                s.freeze()

        def __exit__(self, *exc):
            for s in stacks:
                s.unfreeze()

    return _Ctx()


def train_baseline(model, dataset, cfg, step_hook=None):
    """Plain standard-loss training (optionally with scheduled sampling)."""
    opt = make_optimizer(model, cfg)
    rng = np.random.default_rng(cfg.seed)

    def fn(m, x, y, r):
        return standard_loss_fn(m, x, y, cfg, r)

    log = train_steps(model, dataset, cfg, fn, cfg.total_steps, optimizer=opt,
                      rng=rng, phase="baseline", step_hook=step_hook)
    return model, log, opt


def joint_train_model_reg(l2r, r2l, dataset, cfg, phase_hook=None):
    """Pre-train both directional models with the standard loss, then
    alternate: freeze one model as a helper and train the other with the
    agreement objective, for joint_iterations rounds."""
    opt_f = make_optimizer(l2r, cfg)
    opt_b = make_optimizer(r2l, cfg)
    rng_f = np.random.default_rng((cfg.seed, 1))
    rng_b = np.random.default_rng((cfg.seed, 2))
    log = []

    def std_fn(m, x, y, r):
        return standard_loss_fn(m, x, y, cfg, r)

    try:
        train_steps(l2r, dataset, cfg, std_fn, cfg.pretrain_steps, optimizer=opt_f,
                    rng=rng_f, phase="pretrain/l2r", log=log)
        train_steps(r2l, dataset, cfg, std_fn, cfg.pretrain_steps, optimizer=opt_b,
                    rng=rng_b, phase="pretrain/r2l", log=log)
        if phase_hook is not None:
            phase_hook("pretrain", l2r, r2l)
        for it in range(cfg.joint_iterations):
            with _frozen(r2l.stacks()):
                train_steps(
                    l2r, dataset, cfg,
                    lambda m, x, y, r: L.model_agreement_loss(m, r2l, x, y, cfg),
                    cfg.steps_per_iteration, optimizer=opt_f, rng=rng_f,
                    phase=f"joint{it + 1}/l2r", log=log,
                )
            with _frozen(l2r.stacks()):
                train_steps(
                    r2l, dataset, cfg,
                    lambda m, x, y, r: L.model_agreement_loss(m, l2r, x, y, cfg),
                    cfg.steps_per_iteration, optimizer=opt_b, rng=rng_b,
                    phase=f"joint{it + 1}/r2l", log=log,
                )
            if phase_hook is not None:
                phase_hook(f"joint{it + 1}", l2r, r2l)
    except DivergenceError as err:
        raise DivergenceError(err.step, f"{err} (model_reg schedule)") from err
    return l2r, r2l, log


def joint_train_decoder_reg(bimodel, dataset, cfg, phase_hook=None):
    """Pre-train both decoders jointly with the regularizer weight forced
    to zero, then alternate frozen-helper phases at the configured weight
    for joint_iterations rounds."""
    opt = make_optimizer(bimodel, cfg)
    rng = np.random.default_rng(cfg.seed)
    log = []


    pre_cfg = copy.copy(cfg)
    pre_cfg.lambda_ = 0.0

    try:
        train_steps(
            bimodel, dataset, pre_cfg,
            lambda m, x, y, r: L.decoder_reg_loss(m, x, y, pre_cfg, freeze="none"),
            cfg.pretrain_steps, optimizer=opt, rng=rng, phase="pretrain", log=log,
        )
        if phase_hook is not None:
            phase_hook("pretrain", bimodel)
        for it in range(cfg.joint_iterations):
            with _frozen([bimodel.backward_decoder]):
                train_steps(
                    bimodel, dataset, cfg,
                    lambda m, x, y, r: L.decoder_reg_loss(m, x, y, cfg, freeze="backward"),
                    cfg.steps_per_iteration, optimizer=opt, rng=rng,
                    phase=f"joint{it + 1}/forward", log=log,
                )
            with _frozen([bimodel.forward_decoder]):
                train_steps(
                    bimodel, dataset, cfg,
                    lambda m, x, y, r: L.decoder_reg_loss(m, x, y, cfg, freeze="forward"),
                    cfg.steps_per_iteration, optimizer=opt, rng=rng,
                    phase=f"joint{it + 1}/backward", log=log,
                )
            if phase_hook is not None:
                phase_hook(f"joint{it + 1}", bimodel)
    except DivergenceError as err:
        raise DivergenceError(err.step, f"{err} (decoder_reg schedule)") from err
    return bimodel, log
