"""Soft-margin SVM trained on the hinge-loss dual with SMO pair updates.

Working-set selection follows the second-order rule of Fan, Chen and Lin
(2005): i is the maximal violator, j maximizes the guaranteed decrease.
"""

from __future__ import annotations

import numpy as np

TAU = 1e-12


def sq_distances(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    sq = (A ** 2).sum(axis=1)[:, None] + (B ** 2).sum(axis=1)[None, :] - 2.0 * A @ B.T
    return np.maximum(sq, 0.0)


def kernel(A: np.ndarray, B: np.ndarray, gamma: float | None) -> np.ndarray:
    """Linear kernel when ``gamma`` is None, Gaussian exp(-gamma |a-b|^2) otherwise."""
    if gamma is None:
        return A @ B.T
    return np.exp(-gamma * sq_distances(A, B))


def smo(K: np.ndarray, t: np.ndarray, C: float, tol: float = 1e-4, max_passes: int = 200):
    """Solve max sum(a) - a'Qa/2, 0 <= a <= C, t'a = 0 with Q = (t t') * K.

    Returns (alpha, rho, dual objective after each pass, converged). The
    decision function is sum(alpha * t * K(x_i, x)) - rho.
    """
    n = len(t)
    Q = (t[:, None] * t[None, :]) * K
    diag = np.diag(Q).copy()
    alpha = np.zeros(n)
    grad = -np.ones(n)  # gradient of a'Qa/2 - sum(a)
    history = []
    converged = False
    for it in range(max_passes * n):
        up = ((t > 0) & (alpha < C)) | ((t < 0) & (alpha > 0))
        low = ((t > 0) & (alpha > 0)) | ((t < 0) & (alpha < C))
        score = -t * grad
        if not up.any() or not low.any():
            converged = True
            break
        i = int(np.argmax(np.where(up, score, -np.inf)))
        m_up = score[i]
        m_low = np.min(np.where(low, score, np.inf))
        if m_up - m_low < tol:
            converged = True
            break
        # second-order choice of j among violating members of the low set
        b = m_up - score
        cand = low & (b > 0)
        a = diag[i] + diag - 2.0 * t[i] * t * Q[i]
        a = np.where(a > 0, a, TAU)
        j = int(np.argmax(np.where(cand, b * b / a, -np.inf)))

        old_i, old_j = alpha[i], alpha[j]
        qij = diag[i] + diag[j] - 2.0 * t[i] * t[j] * Q[i, j]
        qij = qij if qij > 0 else TAU
        if t[i] != t[j]:
            delta = (-grad[i] - grad[j]) / qij
            diff = old_i - old_j
            ai, aj = old_i + delta, old_j + delta
            if diff > 0 and aj < 0:
                aj, ai = 0.0, diff
            elif diff <= 0 and ai < 0:
                ai, aj = 0.0, -diff
            if diff > 0 and ai > C:
                ai, aj = C, C - diff
            elif diff <= 0 and aj > C:
                aj, ai = C, C + diff
        else:
            delta = (grad[i] - grad[j]) / qij
            total = old_i + old_j
            ai, aj = old_i - delta, old_j + delta
            if total > C and ai > C:
                ai, aj = C, total - C
            elif total <= C and aj < 0:
                aj, ai = 0.0, total
            if total > C and aj > C:
                aj, ai = C, total - C
            elif total <= C and ai < 0:
                ai, aj = 0.0, total
        alpha[i], alpha[j] = ai, aj
        grad += Q[i] * (ai - old_i) + Q[j] * (aj - old_j)
        if (it + 1) % n == 0:
            history.append(dual_objective(alpha, grad))
    history.append(dual_objective(alpha, grad))

    free = (alpha > 0) & (alpha < C)
    tg = t * grad
    if free.any():
        rho = float(tg[free].mean())
    else:
        # midpoint of the feasible interval for rho
        ub_mask = ((t < 0) & (alpha >= C)) | ((t > 0) & (alpha <= 0))
        lb_mask = ((t > 0) & (alpha >= C)) | ((t < 0) & (alpha <= 0))
        ub = tg[ub_mask].min() if ub_mask.any() else None
        lb = tg[lb_mask].max() if lb_mask.any() else None
        if ub is None or lb is None:
            rho = float(ub if lb is None else lb)
        else:
            rho = float(0.5 * (ub + lb))
    return alpha, rho, history, converged


def dual_objective(alpha: np.ndarray, grad: np.ndarray) -> float:
    # with grad = Qa - 1:  sum(a) - a'Qa/2 = -(a'(grad + 1))/2 + sum(a)
    return float(alpha.sum() - 0.5 * alpha @ (grad + 1.0))
