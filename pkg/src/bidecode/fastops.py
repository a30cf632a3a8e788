"""Fused tape ops for the per-timestep hot path.

Decoder loops dominate runtime and the generic op granularity (one tape
node per add/matmul/tanh) spends most of its time in Python dispatch.
These ops collapse a whole cell update or attention-score block into a
single node with a closed-form backward, calling the kernel backend for
the elementwise pieces. Gradients are covered by the same finite
difference suites as the primitive ops.
"""

import numpy as np

from . import autodiff as ad
from . import kernels
from .autodiff import Tensor, _accum, _record


def gru_cell(Wz, bz, Wr, br, Wh, bh, x, h):
    """Fused gated recurrent cell update: returns the new state tensor.

    z = sigmoid(Wz [x;h] + bz); r = sigmoid(Wr [x;h] + br)
    c = tanh(Wh [x; r*h] + bh); h' = z*c + (1-z)*h
    """
    xv, hv = x.values, h.values
    nx = xv.shape[0]
    xh = np.concatenate([xv, hv])
    z = kernels.sigmoid_fwd(Wz.values @ xh + bz.values)
    r = kernels.sigmoid_fwd(Wr.values @ xh + br.values)
    rh = r * hv
    xrh = np.concatenate([xv, rh])
    c = kernels.tanh_fwd(Wh.values @ xrh + bh.values)
    out = Tensor(z * c + (1.0 - z) * hv)

    def bwd(g):
        dz = g * (c - hv)
        dc = g * z
        dh = g * (1.0 - z)
        dah = dc * (1.0 - c * c)
        _accum(Wh, np.outer(dah, xrh))
        _accum(bh, dah)
        dxrh = Wh.values.T @ dah
        dx = dxrh[:nx].copy()
        drh = dxrh[nx:]
        dr = drh * hv
        dh += drh * r
        dar = dr * r * (1.0 - r)
        daz = dz * z * (1.0 - z)
        _accum(Wr, np.outer(dar, xh))
        _accum(br, dar)
        _accum(Wz, np.outer(daz, xh))
        _accum(bz, daz)
        dxh = Wz.values.T @ daz + Wr.values.T @ dar
        dx += dxh[:nx]
        dh += dxh[nx:]
        _accum(x, dx)
        _accum(h, dh)

    return _record("gru_cell", (Wz, bz, Wr, br, Wh, bh, x, h), out, bwd)


def attention_alignment(cum, conv, Wl, Wq, b, v, keys, s):
    """Fused location-sensitive attention scores + softmax.

    alignment = softmax_j( v . tanh(keys_j + (conv1d(cum) Wl)_j + Wq s + b) )
    """
    f = kernels.conv1d_same_fwd(cum.values, conv.values)
    loc = f @ Wl.values
    q = Wq.values @ s.values + b.values
    pre = keys.values + loc + q
    a = kernels.tanh_fwd(pre)
    e = a @ v.values
    alignment = kernels.softmax_fwd(e)
    out = Tensor(alignment)

    def bwd(g):
        ge = kernels.softmax_bwd(alignment, g)
        _accum(v, a.T @ ge)
        gpre = np.outer(ge, v.values) * (1.0 - a * a)
        _accum(keys, gpre)
        gq = gpre.sum(axis=0)
        _accum(b, gq)
        _accum(Wq, np.outer(gq, s.values))
        _accum(s, Wq.values.T @ gq)
        gf = gpre @ Wl.values.T
        _accum(Wl, f.T @ gpre)
        gcum, gconv = kernels.conv1d_same_bwd(cum.values, conv.values, gf)
        _accum(cum, gcum)
        _accum(conv, gconv)

    return _record("attention", (cum, conv, Wl, Wq, b, v, keys, s), out, bwd)


def affine2(W1, a, W2, b, bias):
    """out = W1 @ a + W2 @ b + bias in one node."""
    out = Tensor(W1.values @ a.values + W2.values @ b.values + bias.values)

    def bwd(g):
        _accum(W1, np.outer(g, a.values))
        _accum(a, W1.values.T @ g)
        _accum(W2, np.outer(g, b.values))
        _accum(b, W2.values.T @ g)
        _accum(bias, g)

    return _record("affine2", (W1, a, W2, b, bias), out, bwd)


def affine(W, a, bias):
    """out = W @ a + bias in one node."""
    out = Tensor(W.values @ a.values + bias.values)

    def bwd(g):
        _accum(W, np.outer(g, a.values))
        _accum(a, W.values.T @ g)
        _accum(bias, g)

    return _record("affine", (W, a, bias), out, bwd)
