# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernel core. Mirrors bidecode.kernels.reference exactly."""

import numpy as np
cimport numpy as cnp
from libc.math cimport tanh as c_tanh, exp as c_exp

cnp.import_array()

BACKEND = "cython"


def tanh_fwd(cnp.ndarray x):
    cdef cnp.ndarray out = np.empty_like(x)
    cdef double[::1] xv = x.ravel()
    cdef double[::1] ov = out.ravel()
    cdef Py_ssize_t i, n = xv.shape[0]
    for i in range(n):
        ov[i] = c_tanh(xv[i])
    return out


def tanh_bwd(cnp.ndarray y, cnp.ndarray gy):
    cdef cnp.ndarray out = np.empty_like(y)
    cdef double[::1] yv = y.ravel()
    cdef double[::1] gv = np.ascontiguousarray(gy).ravel()
    cdef double[::1] ov = out.ravel()
    cdef Py_ssize_t i, n = yv.shape[0]
    for i in range(n):
        ov[i] = gv[i] * (1.0 - yv[i] * yv[i])
    return out


def sigmoid_fwd(cnp.ndarray x):
    cdef cnp.ndarray out = np.empty_like(x)
    cdef double[::1] xv = x.ravel()
    cdef double[::1] ov = out.ravel()
    cdef Py_ssize_t i, n = xv.shape[0]
    cdef double v, e
    for i in range(n):
        v = xv[i]
        if v >= 0.0:
            ov[i] = 1.0 / (1.0 + c_exp(-v))
        else:
            e = c_exp(v)
            ov[i] = e / (1.0 + e)
    return out


def sigmoid_bwd(cnp.ndarray y, cnp.ndarray gy):
    cdef cnp.ndarray out = np.empty_like(y)
    cdef double[::1] yv = y.ravel()
    cdef double[::1] gv = np.ascontiguousarray(gy).ravel()
    cdef double[::1] ov = out.ravel()
    cdef Py_ssize_t i, n = yv.shape[0]
    for i in range(n):
        ov[i] = gv[i] * yv[i] * (1.0 - yv[i])
    return out


def relu_fwd(cnp.ndarray x):
    cdef cnp.ndarray out = np.empty_like(x)
    cdef double[::1] xv = x.ravel()
    cdef double[::1] ov = out.ravel()
    cdef Py_ssize_t i, n = xv.shape[0]
    for i in range(n):
        ov[i] = xv[i] if xv[i] > 0.0 else 0.0
    return out


def relu_bwd(cnp.ndarray y, cnp.ndarray gy):
    cdef cnp.ndarray out = np.empty_like(y)
    cdef double[::1] yv = y.ravel()
    cdef double[::1] gv = np.ascontiguousarray(gy).ravel()
    cdef double[::1] ov = out.ravel()
    cdef Py_ssize_t i, n = yv.shape[0]
    for i in range(n):
        ov[i] = gv[i] if yv[i] > 0.0 else 0.0
    return out


def softmax_fwd(cnp.ndarray x):
    cdef cnp.ndarray out = np.empty_like(x)
    cdef double[::1] xv = x.ravel()
    cdef double[::1] ov = out.ravel()
    cdef Py_ssize_t i, n = xv.shape[0]
    cdef double m = xv[0], s = 0.0
    for i in range(1, n):
        if xv[i] > m:
            m = xv[i]
    for i in range(n):
        ov[i] = c_exp(xv[i] - m)
        s += ov[i]
    for i in range(n):
        ov[i] /= s
    return out


def softmax_bwd(cnp.ndarray y, cnp.ndarray gy):
    cdef cnp.ndarray out = np.empty_like(y)
    cdef double[::1] yv = y.ravel()
    cdef double[::1] gv = np.ascontiguousarray(gy).ravel()
    cdef double[::1] ov = out.ravel()
    cdef Py_ssize_t i, n = yv.shape[0]
    cdef double dot = 0.0
    for i in range(n):
        dot += yv[i] * gv[i]
    for i in range(n):
        ov[i] = yv[i] * (gv[i] - dot)
    return out


def conv1d_same_fwd(cnp.ndarray sig, cnp.ndarray filt):
    cdef double[::1] s = np.ascontiguousarray(sig)
    cdef double[:, ::1] f = np.ascontiguousarray(filt)
    cdef Py_ssize_t T = s.shape[0], K = f.shape[0], W = f.shape[1]
    cdef Py_ssize_t pad = W // 2
    cdef cnp.ndarray out = np.empty((T, K))
    cdef double[:, ::1] o = out
    cdef Py_ssize_t t, k, w, j
    cdef double acc
    for t in range(T):
        for k in range(K):
            acc = 0.0
            for w in range(W):
                j = t + w - pad
                if 0 <= j < T:
                    acc += f[k, w] * s[j]
            o[t, k] = acc
    return out


def conv1d_same_bwd(cnp.ndarray sig, cnp.ndarray filt, cnp.ndarray gout):
    cdef double[::1] s = np.ascontiguousarray(sig)
    cdef double[:, ::1] f = np.ascontiguousarray(filt)
    cdef double[:, ::1] g = np.ascontiguousarray(gout)
    cdef Py_ssize_t T = s.shape[0], K = f.shape[0], W = f.shape[1]
    cdef Py_ssize_t pad = W // 2
    cdef cnp.ndarray gsig = np.zeros(T)
    cdef cnp.ndarray gfilt = np.zeros((K, W))
    cdef double[::1] gs = gsig
    cdef double[:, ::1] gf = gfilt
    cdef Py_ssize_t t, k, w, j
    cdef double gv
    for t in range(T):
        for k in range(K):
            gv = g[t, k]
            if gv != 0.0:
                for w in range(W):
                    j = t + w - pad
                    if 0 <= j < T:
                        gs[j] += gv * f[k, w]
                        gf[k, w] += gv * s[j]
    return gsig, gfilt
