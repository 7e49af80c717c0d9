# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled projected-gradient kernel for ball-constrained quadratic
programs.  Semantics match ``inputdp._pgd_fallback.pgd_ball``."""

from libc.math cimport sqrt

import numpy as np


def pgd_ball(double[:, ::1] hess, double[::1] lin, double radius,
             double step, double tol, long max_iter, double[::1] w0):
    """Run fixed-step projected gradient descent from ``w0``.

    Returns (w, iterations, converged, residual); ``iterations`` counts
    applied update steps.  On convergence the returned ``w`` is the point
    whose residual was verified, not the trailing candidate.
    """
    cdef Py_ssize_t d = lin.shape[0]
    w_arr = np.array(w0, dtype=np.float64)
    cand_arr = np.empty(d, dtype=np.float64)
    cdef double[::1] w = w_arr
    cdef double[::1] cand = cand_arr
    cdef Py_ssize_t i, j
    cdef long iteration
    cdef double acc, nrm2, scale, diff, res2, residual

    residual = float("inf")
    for iteration in range(max_iter + 1):
        nrm2 = 0.0
        for i in range(d):
            acc = lin[i]
            for j in range(d):
                acc += hess[i, j] * w[j]
            cand[i] = w[i] - step * acc
            nrm2 += cand[i] * cand[i]
        if sqrt(nrm2) > radius:
            scale = radius / sqrt(nrm2)
            for i in range(d):
                cand[i] *= scale
        res2 = 0.0
        for i in range(d):
            diff = cand[i] - w[i]
            res2 += diff * diff
        residual = sqrt(res2)
        if residual <= tol:
            return w_arr, iteration, True, residual
        if iteration < max_iter:
            for i in range(d):
                w[i] = cand[i]
    return w_arr, max_iter, False, residual
