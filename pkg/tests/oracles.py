"""Slow, obviously-correct reference implementations used only by the tests."""

import numpy as np


def conv_loop(image, kernel):
    """Direct evaluation of sum_u sum_v K[u,v] I[r+u, s+v] with zero outside."""
    image = np.asarray(image, dtype=float)
    kernel = np.asarray(kernel, dtype=float)
    h, w = image.shape
    h1, h2 = kernel.shape[0] // 2, kernel.shape[1] // 2
    out = np.zeros((h, w))
    for r in range(h):
        for s in range(w):
            acc = 0.0
            for u in range(-h1, h1 + 1):
                for v in range(-h2, h2 + 1):
                    if 0 <= r + u < h and 0 <= s + v < w:
                        acc += kernel[u + h1, v + h2] * image[r + u, s + v]
            out[r, s] = acc
    return out


def conv_layer_loop(maps, weights, bias):
    """Y_i = B_i + sum_j K_ij * Y_j built from ``conv_loop``."""
    out = np.array(bias, dtype=float, copy=True)
    for i in range(weights.shape[0]):
        for j in range(weights.shape[1]):
            out[i] += conv_loop(maps[j], weights[i, j])
    return out


def central_diff(f, x, eps=1e-5):
    """Gradient of scalar f at array x by central differences (x restored)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = x[idx]
        x[idx] = old + eps
        fp = f()
        x[idx] = old - eps
        fm = f()
        x[idx] = old
        g[idx] = (fp - fm) / (2 * eps)
    return g


def f1_bruteforce(y_true, y_pred):
    """Macro F1 by explicit confusion-matrix enumeration."""
    y_true = list(y_true)
    y_pred = list(y_pred)
    labels = sorted(set(y_true))
    k = max(max(y_true), max(y_pred)) + 1
    cm = [[0] * k for _ in range(k)]
    for t, p in zip(y_true, y_pred):
        cm[t][p] += 1
    scores = []
    for c in labels:
        tp = cm[c][c]
        fp = sum(cm[t][c] for t in range(k)) - tp
        fn = sum(cm[c]) - tp
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        scores.append(2 * prec * rec / (prec + rec) if prec + rec else 0.0)
    return sum(scores) / len(scores)


def pixel_rule_fraction(images):
    """Plaque share of visible tooth by the generator's colour rule: plaque
    is clearly red over green, enamel clearly green over red."""
    R, G = images[:, 0], images[:, 1]
    plaque = (R > 2.0 * G) & (R > 0.25)
    tooth = (G > 1.5 * R) & (G > 0.25)
    p = plaque.sum(axis=(1, 2))
    t = tooth.sum(axis=(1, 2))
    return np.where(p + t > 0, p / np.maximum(p + t, 1), 0.0)


def gini_split_bruteforce(x, y):
    """Threshold of the Gini-best single split of 1-D data (smallest on ties)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y)
    vals = np.unique(x)
    best, best_thr = None, None
    for lo, hi in zip(vals[:-1], vals[1:]):
        thr = 0.5 * (lo + hi)
        left, right = y[x <= thr], y[x > thr]
        imp = 0.0
        for part in (left, right):
            _, counts = np.unique(part, return_counts=True)
            p = counts / len(part)
            imp += len(part) * (1.0 - (p ** 2).sum())
        if best is None or imp < best - 1e-12:
            best, best_thr = imp, thr
    return best_thr


def logistic_objective(w, b, x, t, C):
    f = w * x + b
    return np.logaddexp(0.0, -t * f).sum() + w * w / (2 * C)


def logistic_1d_bruteforce(x, t, C, span=5.0, rounds=12):
    """Minimize the 1-feature L2 logistic objective by zooming grids."""
    w0, b0 = 0.0, 0.0
    for _ in range(rounds):
        ws = np.linspace(w0 - span, w0 + span, 41)
        bs = np.linspace(b0 - span, b0 + span, 41)
        vals = np.array([[logistic_objective(w, b, x, t, C) for b in bs] for w in ws])
        i, j = np.unravel_index(np.argmin(vals), vals.shape)
        w0, b0 = ws[i], bs[j]
        span /= 4
    return w0, b0
