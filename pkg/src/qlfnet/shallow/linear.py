"""L2-regularized binary logistic regression by full-batch gradient descent.

Objective: sum_i log(1 + exp(-t_i f_i)) + |w|^2 / (2C), f = Xw + b, t = +-1,
with an unpenalized intercept. Starting from w = 0 every gradient step stays
in the row span of X, so the iterates are tracked as w = X'a and each step
costs one n x n Gram product instead of an n x d one.

Trial steps are Barzilai-Borwein steps, shortened by backtracking until a
nonmonotone Armijo test holds (Raydan 1997): the strong L2 penalty at small
C makes the problem badly conditioned, where a single fixed-ratio step
would crawl.
"""

from __future__ import annotations

from collections import deque

import numpy as np


def _softplus(z):
    return np.logaddexp(0.0, z)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def fit_logistic(X: np.ndarray, t: np.ndarray, C: float, tol: float = 1e-6, max_iter: int = 5000):
    """Returns (w, b, iterations, converged)."""
    n, d = X.shape
    G = X @ X.T
    lam = 1.0 / C
    a = np.zeros(n)
    b = 0.0
    f = np.zeros(n)

    def objective(a, Ga, f):
        return _softplus(-t * f).sum() + 0.5 * lam * (a @ Ga)

    Ga = np.zeros(n)
    obj = objective(a, Ga, f)
    recent = deque([obj], maxlen=10)
    # inverse of a Lipschitz bound on the gradient as the first trial step
    step = 1.0 / (0.25 * (np.linalg.norm(G, 2) + n) + lam)
    converged = False
    it = 0
    prev = None
    for it in range(1, max_iter + 1):
        q = -t * _sigmoid(-t * f)
        v = q + lam * a           # w-gradient is X'v
        gb = q.sum()
        Gv = G @ v
        g_sq = max(v @ Gv, 0.0) + gb * gb
        # cheap 2-norm bound first; the exact sup-norm only near the end
        if np.sqrt(g_sq) < tol * np.sqrt(d + 1):
            if max(np.abs(X.T @ v).max(initial=0.0), abs(gb)) < tol:
                converged = True
                it -= 1
                break
        if prev is not None:
            # Barzilai-Borwein step s's / s'y, with w-space products through G
            da, db = a - prev[0], b - prev[1]
            sy = da @ (Gv - prev[2]) + db * (gb - prev[3])
            ss = da @ (Ga - prev[4]) + db * db
            if sy > 0 and ss > 0:
                step = ss / sy
        prev = (a, b, Gv, gb, Ga)
        # nonmonotone Armijo test against the worst of the recent objectives
        ref = max(recent)
        while True:
            a_new = a - step * v
            b_new = b - step * gb
            Ga_new = Ga - step * Gv
            f_new = Ga_new + b_new
            obj_new = objective(a_new, Ga_new, f_new)
            if obj_new <= ref - 1e-4 * step * g_sq or step < 1e-300:
                break
            step *= 0.5
        a, b, Ga, f, obj = a_new, b_new, Ga_new, f_new, obj_new
        recent.append(obj)
    return X.T @ a, float(b), it, converged
