# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: nearest-neighbour selection and one training epoch.

Signatures and results mirror ``fwips._pykernels``. Training results agree
to rounding; neighbour selection agrees exactly.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp
from libc.stdlib cimport free, malloc


def knn_select(const double[:, ::1] S, const double[:, ::1] Q, Py_ssize_t k):
    cdef Py_ssize_t M = S.shape[0], N = S.shape[1], T = Q.shape[0]
    if S.shape[1] != Q.shape[1]:
        raise ValueError("fingerprint length mismatch")
    if k < 1 or k > M:
        raise ValueError("k out of range")
    idx = np.empty((T, k), dtype=np.int64)
    d2 = np.empty((T, k), dtype=np.float64)
    cdef cnp.int64_t[:, ::1] iv = idx
    cdef double[:, ::1] dv = d2
    cdef Py_ssize_t t, i, j, pos, count
    cdef double d, diff
    with nogil:
        for t in range(T):
            count = 0
            for i in range(M):
                d = 0.0
                for j in range(N):
                    diff = Q[t, j] - S[i, j]
                    d = d + diff * diff
                if count < k:
                    pos = count
                    count += 1
                elif d < dv[t, k - 1]:
                    pos = k - 1
                else:
                    continue
                # strict comparison keeps earlier indices ahead on ties
                while pos > 0 and dv[t, pos - 1] > d:
                    dv[t, pos] = dv[t, pos - 1]
                    iv[t, pos] = iv[t, pos - 1]
                    pos -= 1
                dv[t, pos] = d
                iv[t, pos] = i
    return idx, d2


cdef inline double _sigmoid(double z) noexcept nogil:
    return 1.0 / (1.0 + exp(-z))


def train_epoch(double[::1] params, widths, const double[:, ::1] X, const double[:, ::1] Y,
                const cnp.int64_t[::1] order, Py_ssize_t batch_size, double lr):
    cdef Py_ssize_t L = len(widths) - 1
    cdef Py_ssize_t n_rows = order.shape[0]
    if L < 1 or batch_size < 1:
        raise ValueError("need at least one layer and a positive batch size")
    if X.shape[1] != widths[0] or Y.shape[1] != widths[L]:
        raise ValueError("data width does not match the network")

    cdef Py_ssize_t* w = <Py_ssize_t*> malloc((L + 1) * sizeof(Py_ssize_t))
    cdef Py_ssize_t* w_off = <Py_ssize_t*> malloc(L * sizeof(Py_ssize_t))
    cdef Py_ssize_t* b_off = <Py_ssize_t*> malloc(L * sizeof(Py_ssize_t))
    cdef Py_ssize_t* a_off = <Py_ssize_t*> malloc((L + 1) * sizeof(Py_ssize_t))
    cdef Py_ssize_t l, i, j, p, start, stop, r, row, n_in, n_out, total_act = 0, n_params = 0
    cdef Py_ssize_t max_w = 0
    for l in range(L + 1):
        w[l] = widths[l]
        a_off[l] = total_act
        total_act += w[l]
        if w[l] > max_w:
            max_w = w[l]
    for l in range(L):
        w_off[l] = n_params
        n_params += w[l] * w[l + 1]
        b_off[l] = n_params
        n_params += w[l + 1]
    if n_params != params.shape[0]:
        free(w); free(w_off); free(b_off); free(a_off)
        raise ValueError("parameter vector length does not match widths")

    cdef double* act = <double*> malloc(total_act * sizeof(double))
    cdef double* grad = <double*> malloc(n_params * sizeof(double))
    cdef double* delta = <double*> malloc(max_w * sizeof(double))
    cdef double* prev = <double*> malloc(max_w * sizeof(double))
    cdef double* tmp
    cdef double z, a, scale
    with nogil:
        start = 0
        while start < n_rows:
            stop = start + batch_size
            if stop > n_rows:
                stop = n_rows
            for p in range(n_params):
                grad[p] = 0.0
            for r in range(start, stop):
                row = order[r]
                for i in range(w[0]):
                    act[i] = X[row, i]
                # forward
                for l in range(L):
                    n_in = w[l]
                    n_out = w[l + 1]
                    for j in range(n_out):
                        z = params[b_off[l] + j]
                        for i in range(n_in):
                            z = z + act[a_off[l] + i] * params[w_off[l] + i * n_out + j]
                        act[a_off[l + 1] + j] = z if l == L - 1 else _sigmoid(z)
                # output sensitivity of the squared error, linear output layer
                for j in range(w[L]):
                    delta[j] = -2.0 * (Y[row, j] - act[a_off[L] + j])
                # backward
                l = L - 1
                while l >= 0:
                    n_in = w[l]
                    n_out = w[l + 1]
                    for i in range(n_in):
                        a = act[a_off[l] + i]
                        z = 0.0
                        for j in range(n_out):
                            grad[w_off[l] + i * n_out + j] += a * delta[j]
                            z = z + params[w_off[l] + i * n_out + j] * delta[j]
                        prev[i] = z * a * (1.0 - a)
                    for j in range(n_out):
                        grad[b_off[l] + j] += delta[j]
                    tmp = delta
                    delta = prev
                    prev = tmp
                    l -= 1
            scale = lr / (stop - start)
            for p in range(n_params):
                params[p] -= scale * grad[p]
            start = stop
    free(w); free(w_off); free(b_off); free(a_off)
    free(act); free(grad); free(delta); free(prev)
