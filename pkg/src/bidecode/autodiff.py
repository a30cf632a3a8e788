"""Reverse-mode differentiation over dense float64 tensors.

A ``Tape`` records ops in execution order while it is active; ``backward``
replays the record in reverse, accumulating gradients additively. Graphs
are rebuilt per training step, so decoder loops may have data-dependent
length. Ops executed with no active tape (or on tensors that don't require
grad) are plain forward numerics with no recording overhead.

Single-threaded per tape; a live tape must not be shared between threads.
"""

import numpy as np

from . import kernels
from .exceptions import (
    GraphError,
    NonDeterministicError,
    NonFiniteError,
    ShapeMismatchError,
)


class Tensor:
    """Dense float64 array with an accumulated gradient slot."""

    __slots__ = ("values", "grad", "requires_grad")

    def __init__(self, values, requires_grad=False):
        self.values = np.ascontiguousarray(values, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.values.shape

    @property
    def size(self):
        return self.values.size

    def item(self):
        return float(self.values.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def grad_or_zeros(self):
        return self.grad if self.grad is not None else np.zeros_like(self.values)

    def __repr__(self):
        return f"Tensor(shape={self.values.shape}, requires_grad={self.requires_grad})"


def _accum(t, g):
    if t.requires_grad:
        if t.grad is None:
            t.grad = np.array(g, dtype=np.float64)
        else:
            t.grad += g


class Tape:
    """Execution record: (kind, inputs, output, backward closure) per node."""

    def __init__(self):
        self.nodes = []
        self._done_forward = False

    def __enter__(self):
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc):
        _TAPE_STACK.pop()
        self._done_forward = True
        return False


_TAPE_STACK = []


def active_tape():
    return _TAPE_STACK[-1] if _TAPE_STACK else None


class no_grad:
    """Suspend recording within a ``with`` block (pushes a null tape slot)."""

    def __enter__(self):
        _TAPE_STACK.append(None)
        return self

    def __exit__(self, *exc):
        _TAPE_STACK.pop()
        return False


def _record(kind, inputs, out, bwd):
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.nodes.append((kind, inputs, out, bwd))
    return out


def backward(tape, loss):
    """Populate .grad of every requires_grad tensor reachable from loss."""
    if tape is None or (not tape.nodes and not loss.requires_grad):
        raise GraphError("backward called with no recorded forward pass")
    if loss.size != 1:
        raise GraphError(f"loss must be scalar-shaped, got shape {loss.shape}")
    loss.grad = np.ones_like(loss.values)
    for kind, inputs, out, bwd in reversed(tape.nodes):
        if out.grad is not None:
            bwd(out.grad)


# ---------------------------------------------------------------------------
# ops


def constant(values):
    return Tensor(values)


def add(a, b):
    """Elementwise add; also supports adding a vector to each matrix row."""
    av, bv = a.values, b.values
    if av.shape == bv.shape:
        out = Tensor(av + bv)

        def bwd(g):
            _accum(a, g)
            _accum(b, g)

    elif av.ndim == 2 and bv.ndim == 1 and av.shape[1] == bv.shape[0]:
        out = Tensor(av + bv)

        def bwd(g):
            _accum(a, g)
            _accum(b, g.sum(axis=0))

    else:
        raise ShapeMismatchError(f"add: incompatible shapes {av.shape} and {bv.shape}")
    return _record("add", (a, b), out, bwd)


def mul(a, b):
    if a.values.shape != b.values.shape:
        raise ShapeMismatchError(
            f"mul: incompatible shapes {a.values.shape} and {b.values.shape}"
        )
    out = Tensor(a.values * b.values)

    def bwd(g):
        _accum(a, g * b.values)
        _accum(b, g * a.values)

    return _record("mul", (a, b), out, bwd)


def scale(a, c):
    c = float(c)
    out = Tensor(a.values * c)

    def bwd(g):
        _accum(a, g * c)

    return _record("scale", (a,), out, bwd)


def matmul(a, b):
    """Matrix/vector product: (m,n)@(n,p), (m,n)@(n,), or (n,)@(n,p)."""
    av, bv = a.values, b.values
    if av.ndim == 0 or bv.ndim == 0 or av.shape[-1 if av.ndim > 1 else 0] != bv.shape[0]:
        raise ShapeMismatchError(f"matmul: incompatible shapes {av.shape} and {bv.shape}")
    out = Tensor(av @ bv)

    def bwd(g):
        if av.ndim == 2 and bv.ndim == 2:
            _accum(a, g @ bv.T)
            _accum(b, av.T @ g)
        elif av.ndim == 2 and bv.ndim == 1:
            _accum(a, np.outer(g, bv))
            _accum(b, av.T @ g)
        elif av.ndim == 1 and bv.ndim == 2:
            _accum(a, bv @ g)
            _accum(b, np.outer(av, g))
        else:  # vector·vector -> scalar
            _accum(a, g * bv)
            _accum(b, g * av)

    return _record("matmul", (a, b), out, bwd)


def concat(tensors):
    """Concatenate 1-D tensors into one vector."""
    for t in tensors:
        if t.values.ndim != 1:
            raise ShapeMismatchError(f"concat: expected 1-D inputs, got {t.values.shape}")
    sizes = [t.values.shape[0] for t in tensors]
    out = Tensor(np.concatenate([t.values for t in tensors]))
    tensors = tuple(tensors)

    def bwd(g):
        off = 0
        for t, n in zip(tensors, sizes):
            _accum(t, g[off : off + n])
            off += n

    return _record("concat", tensors, out, bwd)


def slice_rows(a, start, stop, squeeze=False):
    """Slice [start:stop) along axis 0; squeeze drops a singleton axis 0."""
    n = a.values.shape[0]
    if not (0 <= start < stop <= n):
        raise ShapeMismatchError(f"slice: [{start}:{stop}) outside extent {n}")
    piece = a.values[start:stop]
    if squeeze:
        if stop - start != 1:
            raise ShapeMismatchError("slice: squeeze requires a single row")
        piece = piece[0]
    out = Tensor(piece.copy())

    def bwd(g):
        if a.requires_grad:
            full = np.zeros_like(a.values)
            full[start:stop] = g
            _accum(a, full)

    return _record("slice", (a,), out, bwd)


def _unary(kind, fwd, bwdk):
    def op(a):
        y = fwd(a.values)
        out = Tensor(y)

        def bwd(g):
            _accum(a, bwdk(y, g))

        return _record(kind, (a,), out, bwd)

    return op


tanh = _unary("tanh", kernels.tanh_fwd, kernels.tanh_bwd)
sigmoid = _unary("sigmoid", kernels.sigmoid_fwd, kernels.sigmoid_bwd)
relu = _unary("relu", kernels.relu_fwd, kernels.relu_bwd)


def softmax(a, axis=-1):
    """Max-subtracted softmax along one axis (1-D or 2-D input)."""
    av = a.values
    if av.ndim == 1:
        y = kernels.softmax_fwd(av)
    elif av.ndim == 2 and axis in (-1, 1):
        z = av - av.max(axis=1, keepdims=True)
        e = np.exp(z)
        y = e / e.sum(axis=1, keepdims=True)
    else:
        raise ShapeMismatchError(f"softmax: unsupported shape {av.shape} axis {axis}")
    out = Tensor(y)

    def bwd(g):
        if av.ndim == 1:
            _accum(a, kernels.softmax_bwd(y, g))
        else:
            dot = (y * g).sum(axis=1, keepdims=True)
            _accum(a, y * (g - dot))

    return _record("softmax", (a,), out, bwd)


def conv1d_same(sig, filt):
    """Zero same-padded 1-D convolution: (T,) signal, (K,W) filters -> (T,K)."""
    if sig.values.ndim != 1 or filt.values.ndim != 2:
        raise ShapeMismatchError(
            f"conv1d: need (T,) signal and (K,W) filters, got {sig.values.shape}, {filt.values.shape}"
        )
    out = Tensor(kernels.conv1d_same_fwd(sig.values, filt.values))

    def bwd(g):
        gsig, gfilt = kernels.conv1d_same_bwd(sig.values, filt.values, g)
        _accum(sig, gsig)
        _accum(filt, gfilt)

    return _record("conv1d", (sig, filt), out, bwd)


def mse(a, b):
    """Mean squared error over all entries; scalar output."""
    if a.values.shape != b.values.shape:
        raise ShapeMismatchError(
            f"mse: incompatible shapes {a.values.shape} and {b.values.shape}"
        )
    diff = a.values - b.values
    n = diff.size
    out = Tensor(np.array((diff * diff).sum() / n))

    def bwd(g):
        go = float(np.sum(g)) * 2.0 / n
        _accum(a, go * diff)
        _accum(b, -go * diff)

    return _record("mse", (a, b), out, bwd)


def sum_all(a):
    out = Tensor(np.array(a.values.sum()))

    def bwd(g):
        _accum(a, np.full_like(a.values, float(np.sum(g))))

    return _record("sum", (a,), out, bwd)


def bce_logits(logits, targets):
    """Mean binary cross-entropy from raw logits; numerically stable."""
    lv, tv = logits.values, targets.values
    if lv.shape != tv.shape:
        raise ShapeMismatchError(f"bce: incompatible shapes {lv.shape} and {tv.shape}")
    n = lv.size
    loss = np.maximum(lv, 0.0) - lv * tv + np.log1p(np.exp(-np.abs(lv)))
    out = Tensor(np.array(loss.sum() / n))
    sig = kernels.sigmoid_fwd(lv)

    def bwd(g):
        go = float(np.sum(g)) / n
        _accum(logits, go * (sig - tv))
        _accum(targets, -go * lv)

    return _record("bce_logits", (logits, targets), out, bwd)


# ---------------------------------------------------------------------------
# dispatch surface

_OPS = {
    "matmul": matmul,
    "add": add,
    "mul": mul,
    "concat": lambda *ts: concat(list(ts)),
    "slice": slice_rows,
    "tanh": tanh,
    "sigmoid": sigmoid,
    "relu": relu,
    "softmax": softmax,
    "conv1d": conv1d_same,
    "mse": mse,
    "sum": sum_all,
    "scale": scale,
    "bce_logits": bce_logits,
}


def forward_op(kind, inputs, **kwargs):
    """Validated op dispatch: checks kind, input finiteness, then applies."""
    if kind not in _OPS:
        raise ShapeMismatchError(f"unknown op kind {kind!r}")
    for t in inputs:
        if not np.all(np.isfinite(t.values)):
            raise NonFiniteError(f"{kind}: non-finite input tensor")
    return _OPS[kind](*inputs, **kwargs)


# ---------------------------------------------------------------------------
# gradient checking


def grad_check(fn, params, step=1e-5, tolerance=1e-4):
    """Compare analytic gradients of fn() against central finite differences.

    fn computes a scalar loss Tensor from the current values of `params`
    (a name -> Tensor mapping) under the tape it is given. Returns a report
    dict with per-parameter max relative error and an overall pass flag.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    for p in params.values():
        p.requires_grad = True
        p.zero_grad()

    with Tape() as tape:
        loss = fn()
    base = loss.item()
    with no_grad():
        again = fn().item()
    if again != base:
        raise NonDeterministicError(f"fn is not deterministic: {base} vs {again}")
    if tape.nodes:
        backward(tape, loss)
    analytic = {name: p.grad_or_zeros().copy() for name, p in params.items()}

    report = {"per_param": {}, "max_rel_error": 0.0}
    for name, p in params.items():
        flat = p.values.reshape(-1)
        worst = 0.0
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            with no_grad():
                hi = fn().item()
            flat[i] = orig - step
            with no_grad():
                lo = fn().item()
            flat[i] = orig
            numeric = (hi - lo) / (2.0 * step)
            a = analytic[name].reshape(-1)[i]
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-6)
            worst = max(worst, rel)
        report["per_param"][name] = worst
        report["max_rel_error"] = max(report["max_rel_error"], worst)
    report["passed"] = report["max_rel_error"] < tolerance
    report["tolerance"] = tolerance
    for p in params.values():
        p.zero_grad()
    return report
