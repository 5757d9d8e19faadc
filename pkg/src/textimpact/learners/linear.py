"""Ridge and lasso by cyclic coordinate descent on standardized features.

Objective (``Xs`` centered and scaled, intercept unpenalized and equal to mean(y)):

    ridge:  1/(2n) ||y - ybar - Xs b||^2 + lam/2 ||b||^2
    lasso:  1/(2n) ||y - ybar - Xs b||^2 + lam   ||b||_1

The solver works on the Gram form G = Xs'Xs/n, c = Xs'(y - ybar)/n so a sweep
costs O(p^2) regardless of n.
"""

from __future__ import annotations

import warnings

import numpy as np
from numba import njit

TOL = 1e-8
MAX_SWEEPS = 10_000


@njit(cache=True)
def _cd_sweeps(G, c, lam, l1, tol, max_sweeps, b):  # pragma: no cover - compiled
    p = c.shape[0]
    for sweep in range(max_sweeps):
        max_change = 0.0
        for j in range(p):
            gjj = G[j, j]
            if gjj <= 0.0:
                b[j] = 0.0
                continue
            r = c[j] + gjj * b[j]
            for k in range(p):
                r -= G[j, k] * b[k]
            if l1:
                if r > lam:
                    new = (r - lam) / gjj
                elif r < -lam:
                    new = (r + lam) / gjj
                else:
                    new = 0.0
            else:
                new = r / (gjj + lam)
            change = abs(new - b[j])
            if change > max_change:
                max_change = change
            b[j] = new
        if max_change < tol:
            return sweep + 1
    return max_sweeps


def coordinate_descent(
    Xs: np.ndarray,
    yc: np.ndarray,
    lam: float,
    penalty: str,
    tol: float = TOL,
    max_sweeps: int = MAX_SWEEPS,
    warm_start: np.ndarray | None = None,
) -> tuple[np.ndarray, int]:
    """Solve for the slopes given centered/scaled ``Xs`` and centered ``yc``.

    Returns ``(coef, sweeps)``. Emits a RuntimeWarning if ``max_sweeps`` is hit.
    """
    n = Xs.shape[0]
    G = (Xs.T @ Xs) / n
    c = (Xs.T @ yc) / n
    b = np.zeros(Xs.shape[1]) if warm_start is None else np.array(warm_start, dtype=float)
    sweeps = _cd_sweeps(G, c, float(lam), penalty == "lasso", float(tol), int(max_sweeps), b)
    if sweeps >= max_sweeps:
        warnings.warn(f"{penalty} coordinate descent hit {max_sweeps} sweeps without converging", RuntimeWarning)
    return b, int(sweeps)


def lasso_lambda_max(Xs: np.ndarray, yc: np.ndarray) -> float:
    """Smallest lasso penalty at which every slope is exactly zero."""
    return float(np.max(np.abs(Xs.T @ yc)) / Xs.shape[0])


def objective(Xs: np.ndarray, yc: np.ndarray, coef: np.ndarray, lam: float, penalty: str) -> float:
    r = yc - Xs @ coef
    loss = 0.5 * float(r @ r) / Xs.shape[0]
    if penalty == "lasso":
        return loss + lam * float(np.abs(coef).sum())
    return loss + 0.5 * lam * float(coef @ coef)
