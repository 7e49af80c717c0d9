"""Pure-numpy projected-gradient kernel (fallback when the compiled
extension is unavailable).

Minimizes (1/2) w'Hw + g'w over the Euclidean ball by fixed-step
projected gradient descent.  Semantics match ``inputdp._pgd.pgd_ball``:
the returned point has verified projected-gradient residual
||w - project(w - step * grad(w))|| <= tol.
"""

from __future__ import annotations

import numpy as np


def pgd_ball(
    hess: np.ndarray,
    lin: np.ndarray,
    radius: float,
    step: float,
    tol: float,
    max_iter: int,
    w0: np.ndarray,
) -> tuple[np.ndarray, int, bool, float]:
    """Run projected gradient descent from ``w0``.

    Returns (w, iterations, converged, residual); ``iterations`` counts
    applied update steps.  On convergence the returned ``w`` is the point
    whose residual was verified, not the trailing candidate.
    """
    w = np.array(w0, dtype=np.float64)
    residual = np.inf
    for iteration in range(max_iter + 1):
        candidate = w - step * (hess @ w + lin)
        nrm = float(np.linalg.norm(candidate))
        if nrm > radius:
            candidate *= radius / nrm
        residual = float(np.linalg.norm(candidate - w))
        if residual <= tol:
            return w, iteration, True, residual
        if iteration < max_iter:
            w = candidate
    return w, max_iter, False, residual
