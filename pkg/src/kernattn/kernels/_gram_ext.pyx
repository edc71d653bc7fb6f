# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled gram kernels; same contract as ``_gram_py``.

Loops are fused over the feature axis so no ``[G, T, S, d]`` temporaries
are materialized.  Single-threaded on purpose: summation order is fixed.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, sqrt

cnp.import_array()

cdef enum:
    EDP = 0
    RBF = 1
    L2 = 2
    EXPINT = 3
    QUAD = 4


def gram_forward(int kind, const double[:, :, ::1] Q, const double[:, :, ::1] K,
                 const double[::1] param, double scale):
    cdef Py_ssize_t G = Q.shape[0], T = Q.shape[1], S = K.shape[1], d = Q.shape[2]
    cdef Py_ssize_t g, t, s, l
    cdef double acc, diff, p, a, b
    out_arr = np.empty((G, T, S), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    if kind < 0 or kind > 4:
        raise ValueError(f"unknown kernel code {kind}")
    with nogil:
        for g in range(G):
            p = param[g]
            for t in range(T):
                for s in range(S):
                    acc = 0.0
                    if kind == EDP or kind == QUAD:
                        for l in range(d):
                            acc = acc + Q[g, t, l] * K[g, s, l]
                        if kind == EDP:
                            out[g, t, s] = exp(acc * scale)
                        else:
                            acc = acc * scale + p
                            out[g, t, s] = acc * acc
                    elif kind == RBF or kind == L2:
                        for l in range(d):
                            diff = Q[g, t, l] - K[g, s, l]
                            acc = acc + diff * diff
                        if kind == RBF:
                            out[g, t, s] = exp(-(p * scale) * acc)
                        else:
                            out[g, t, s] = (p * scale) * sqrt(acc)
                    else:
                        for l in range(d):
                            a = Q[g, t, l]
                            b = K[g, s, l]
                            acc = acc + (a if a <= b else b)
                        out[g, t, s] = exp(acc)
    return out_arr


def gram_backward(int kind, const double[:, :, ::1] Q, const double[:, :, ::1] K,
                  const double[::1] param, double scale,
                  const double[:, :, ::1] out, const double[:, :, ::1] gout):
    cdef Py_ssize_t G = Q.shape[0], T = Q.shape[1], S = K.shape[1], d = Q.shape[2]
    cdef Py_ssize_t g, t, s, l
    cdef double acc, diff, p, c, w, r, a, b, dp
    dQ_arr = np.zeros((G, T, d), dtype=np.float64)
    dK_arr = np.zeros((G, S, d), dtype=np.float64)
    dP_arr = np.zeros(G, dtype=np.float64)
    cdef double[:, :, ::1] dQ = dQ_arr
    cdef double[:, :, ::1] dK = dK_arr
    cdef double[::1] dP = dP_arr
    if kind < 0 or kind > 4:
        raise ValueError(f"unknown kernel code {kind}")
    with nogil:
        for g in range(G):
            p = param[g]
            dp = 0.0
            for t in range(T):
                for s in range(S):
                    w = gout[g, t, s]
                    if kind == EDP:
                        c = w * out[g, t, s] * scale
                        for l in range(d):
                            dQ[g, t, l] += c * K[g, s, l]
                            dK[g, s, l] += c * Q[g, t, l]
                    elif kind == QUAD:
                        acc = 0.0
                        for l in range(d):
                            acc = acc + Q[g, t, l] * K[g, s, l]
                        c = 2.0 * w * (acc * scale + p)
                        dp += c
                        c = c * scale
                        for l in range(d):
                            dQ[g, t, l] += c * K[g, s, l]
                            dK[g, s, l] += c * Q[g, t, l]
                    elif kind == RBF:
                        acc = 0.0
                        for l in range(d):
                            diff = Q[g, t, l] - K[g, s, l]
                            acc = acc + diff * diff
                        c = w * out[g, t, s]
                        dp += c * (-scale) * acc
                        c = c * (-2.0 * scale) * p
                        for l in range(d):
                            diff = Q[g, t, l] - K[g, s, l]
                            dQ[g, t, l] += c * diff
                            dK[g, s, l] -= c * diff
                    elif kind == L2:
                        acc = 0.0
                        for l in range(d):
                            diff = Q[g, t, l] - K[g, s, l]
                            acc = acc + diff * diff
                        r = sqrt(acc)
                        dp += w * scale * r
                        if r > 0.0:
                            c = w * (p * scale) / r
                            for l in range(d):
                                diff = Q[g, t, l] - K[g, s, l]
                                dQ[g, t, l] += c * diff
                                dK[g, s, l] -= c * diff
                    else:
                        c = w * out[g, t, s]
                        for l in range(d):
                            a = Q[g, t, l]
                            b = K[g, s, l]
                            if a <= b:
                                dQ[g, t, l] += c
                            else:
                                dK[g, s, l] += c
            dP[g] = dp
    return dQ_arr, dK_arr, dP_arr
