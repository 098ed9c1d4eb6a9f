# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled forward-backward kernels; semantics match _fbcore_py exactly."""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, log, INFINITY

cnp.import_array()

BACKEND = "cython"


def forward(double[:, ::1] log_mu, double[::1] pi, double[:, ::1] rho):
    cdef Py_ssize_t K = log_mu.shape[0]
    cdef Py_ssize_t T = log_mu.shape[1]
    alpha_arr = np.empty((K, T))
    log_c_arr = np.empty(T)
    cdef double[:, ::1] alpha = alpha_arr
    cdef double[::1] log_c = log_c_arr
    cdef double[::1] pred = np.empty(K)
    cdef double shift, c, v
    cdef Py_ssize_t t, k, j

    for k in range(K):
        pred[k] = pi[k]
    for t in range(T):
        shift = -INFINITY
        for k in range(K):
            if log_mu[k, t] > shift:
                shift = log_mu[k, t]
        if shift == -INFINITY:
            return alpha_arr, log_c_arr, t
        c = 0.0
        for k in range(K):
            v = pred[k] * exp(log_mu[k, t] - shift)
            alpha[k, t] = v
            c += v
        if c <= 0.0:
            return alpha_arr, log_c_arr, t
        for k in range(K):
            alpha[k, t] /= c
        log_c[t] = log(c) + shift
        if t + 1 < T:
            for k in range(K):
                v = 0.0
                for j in range(K):
                    v += alpha[j, t] * rho[j, k]
                pred[k] = v
    return alpha_arr, log_c_arr, -1


def backward(double[:, ::1] log_mu, double[:, ::1] rho, double[::1] log_c):
    cdef Py_ssize_t K = log_mu.shape[0]
    cdef Py_ssize_t T = log_mu.shape[1]
    beta_arr = np.empty((K, T))
    cdef double[:, ::1] beta = beta_arr
    cdef double[::1] w = np.empty(K)
    cdef double v
    cdef Py_ssize_t t, k, j

    for k in range(K):
        beta[k, T - 1] = 1.0
    for t in range(T - 2, -1, -1):
        for j in range(K):
            w[j] = exp(log_mu[j, t + 1] - log_c[t + 1]) * beta[j, t + 1]
        for k in range(K):
            v = 0.0
            for j in range(K):
                v += rho[k, j] * w[j]
            beta[k, t] = v
    return beta_arr


def posteriors(double[:, ::1] log_mu, double[:, ::1] rho,
               double[:, ::1] alpha_hat, double[:, ::1] beta_hat,
               double[::1] log_c):
    cdef Py_ssize_t K = log_mu.shape[0]
    cdef Py_ssize_t T = log_mu.shape[1]
    gamma_arr = np.empty((K, T))
    xi_arr = np.empty((K, K, max(T - 1, 0)))
    cdef double[:, ::1] gamma = gamma_arr
    cdef double[:, :, ::1] xi = xi_arr
    cdef double[::1] w = np.empty(K)
    cdef double s, v
    cdef Py_ssize_t t, k, j

    s = 0.0
    for k in range(K):
        v = alpha_hat[k, 0] * beta_hat[k, 0]
        gamma[k, 0] = v
        s += v
    for k in range(K):
        gamma[k, 0] /= s
    for t in range(1, T):
        for k in range(K):
            w[k] = exp(log_mu[k, t] - log_c[t]) * beta_hat[k, t]
            gamma[k, t] = 0.0
        for j in range(K):
            for k in range(K):
                v = alpha_hat[j, t - 1] * rho[j, k] * w[k]
                xi[j, k, t - 1] = v
                gamma[k, t] += v
    return gamma_arr, xi_arr
