"""Pure-numpy reference kernels.

These are the fallback implementations of the hot per-timestep numerics.
The compiled module ``bidecode.kernels._core`` mirrors this API exactly;
whichever is active is chosen in ``bidecode.kernels.__init__``.

All functions take and return float64 C-contiguous numpy arrays.
"""

import numpy as np

BACKEND = "numpy"


def tanh_fwd(x):
    return np.tanh(x)


def tanh_bwd(y, gy):
    """Gradient through tanh given the forward output y."""
    return gy * (1.0 - y * y)


def sigmoid_fwd(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_bwd(y, gy):
    return gy * y * (1.0 - y)


def relu_fwd(x):
    return np.maximum(x, 0.0)


def relu_bwd(y, gy):
    return np.where(y > 0.0, gy, 0.0)


def softmax_fwd(x):
    """Stable softmax of a 1-D vector."""
    z = x - x.max()
    e = np.exp(z)
    return e / e.sum()


def softmax_bwd(y, gy):
    dot = float(y @ gy)
    return y * (gy - dot)


def conv1d_same_fwd(sig, filt):
    """1-D convolution with zero same-padding, stride 1.

    sig:  (T,) signal
    filt: (K, W) filter bank, W odd
    out:  (T, K), out[t, k] = sum_w filt[k, w] * sig[t + w - W//2]
    """
    T = sig.shape[0]
    K, W = filt.shape
    pad = W // 2
    padded = np.zeros(T + 2 * pad)
    padded[pad : pad + T] = sig
    out = np.empty((T, K))
    for k in range(K):
        f = filt[k]
        for t in range(T):
            out[t, k] = padded[t : t + W] @ f
    return out


def conv1d_same_bwd(sig, filt, gout):
    """Gradients of conv1d_same_fwd w.r.t. signal and filters."""
    T = sig.shape[0]
    K, W = filt.shape
    pad = W // 2
    padded = np.zeros(T + 2 * pad)
    padded[pad : pad + T] = sig
    gpadded = np.zeros(T + 2 * pad)
    gfilt = np.zeros_like(filt)
    for k in range(K):
        gk = gout[:, k]
        f = filt[k]
        for t in range(T):
            g = gk[t]
            if g != 0.0:
                gpadded[t : t + W] += g * f
                gfilt[k] += g * padded[t : t + W]
    return gpadded[pad : pad + T], gfilt
