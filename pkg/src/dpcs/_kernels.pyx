# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops: per-household power allocation and single-vector MLP inference."""
import numpy as np
cimport numpy as cnp

cnp.import_array()

cdef double START_TOL = 1e-9
cdef double ZERO_KWH = 1e-12


def allocate(const signed char[::1] category, const double[::1] max_rate, double[::1] remaining,
             unsigned char[::1] started, double power, double dt, double[::1] out):
    cdef Py_ssize_t j, n = category.shape[0]
    cdef double residual = power, need, draw, total = 0.0

    for j in range(n):
        out[j] = 0.0
    # committed non-interruptible runs
    for j in range(n):
        if category[j] == 1 and started[j] and remaining[j] > 0.0:
            draw = remaining[j] / dt
            if draw > max_rate[j]:
                draw = max_rate[j]
            out[j] = draw
            residual -= draw
    if residual < 0.0:
        residual = 0.0
    for j in range(n):
        if category[j] == 1 and not started[j] and remaining[j] > 0.0:
            need = remaining[j] / dt
            if need > max_rate[j]:
                need = max_rate[j]
            if residual + START_TOL >= need:
                started[j] = 1
                out[j] = need
                residual -= need
                if residual < 0.0:
                    residual = 0.0
    for j in range(n):
        if category[j] == 2 and remaining[j] > 0.0 and residual > 0.0:
            draw = remaining[j] / dt
            if draw > max_rate[j]:
                draw = max_rate[j]
            if draw > residual:
                draw = residual
            out[j] = draw
            residual -= draw
    for j in range(n):
        if out[j] > 0.0:
            total += out[j]
            remaining[j] -= out[j] * dt
            if remaining[j] < ZERO_KWH:
                remaining[j] = 0.0
            if remaining[j] == 0.0 and category[j] == 1:
                started[j] = 0
    return total


def mlp_forward_vec(const double[::1] x, const double[::1] mean, const double[::1] inv_std,
                    list weights, list biases, bint nonneg_output):
    """Forward pass of a ReLU MLP on one input vector; weights are (in, out) row-major."""
    cdef Py_ssize_t n_layers = len(weights)
    cdef Py_ssize_t k, i, o, n_in, n_out
    cdef const double[:, ::1] W
    cdef const double[::1] b
    cdef double acc
    cdef cnp.ndarray[cnp.float64_t, ndim=1] h = np.empty(x.shape[0])
    cdef cnp.ndarray[cnp.float64_t, ndim=1] z
    cdef double[::1] hv = h
    cdef double[::1] zv

    for i in range(x.shape[0]):
        hv[i] = (x[i] - mean[i]) * inv_std[i]
    for k in range(n_layers):
        W = weights[k]
        b = biases[k]
        n_in = W.shape[0]
        n_out = W.shape[1]
        z = np.empty(n_out)
        zv = z
        for o in range(n_out):
            zv[o] = b[o]
        for i in range(n_in):
            acc = hv[i]
            if acc == 0.0:
                continue
            for o in range(n_out):
                zv[o] += acc * W[i, o]
        if k < n_layers - 1 or nonneg_output:
            for o in range(n_out):
                if zv[o] < 0.0:
                    zv[o] = 0.0
        h = z
        hv = zv
    return h
