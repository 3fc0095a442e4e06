"""Independent reference computations used by the tests.

Nothing here calls the analytic backward pass or the vectorised metrics.
"""

import numpy as np

from oadtm import autodiff as ad


def numeric_grad(f, t, h=1e-5):
    """Central finite differences of scalar ``f()`` with respect to ``t.values``."""
    grad = np.zeros_like(t.values)
    flat = t.values.reshape(-1)
    out = grad.reshape(-1)
    with ad.no_grad():
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up = float(f().values)
            flat[i] = old - h
            down = float(f().values)
            flat[i] = old
            out[i] = (up - down) / (2 * h)
    return grad


def analytic_grads(f, tensors):
    for t in tensors:
        t.zero_grad()
    loss = f()
    ad.backward(loss)
    return [t.grad.copy() for t in tensors]


def rel_error(a, b, floor=1e-6):
    """Largest elementwise |a - b| / max(|a|, |b|, floor)."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


def max_grad_error(f, tensors, h=1e-5):
    """Worst relative error between backward() and finite differences over ``tensors``."""
    analytic = analytic_grads(f, tensors)
    worst = 0.0
    for t, g in zip(tensors, analytic):
        worst = max(worst, rel_error(g, numeric_grad(f, t, h)))
    return worst


def brute_force_ap(scores, labels, calibrated=False):
    """Enumerate every cut-off explicitly; ties ranked by ascending index."""
    n = len(scores)
    order = sorted(range(n), key=lambda i: (-scores[i], i))
    P = sum(1 for y in labels if y)
    if P == 0:
        return float("nan")
    neg = n - P
    if calibrated and neg == 0:
        return 1.0
    w = neg / P if calibrated else None
    total = 0.0
    for k in range(1, n + 1):
        top = order[:k]
        if not labels[order[k - 1]]:
            continue
        tp = sum(1 for i in top if labels[i])
        fp = k - tp
        total += tp / (tp + fp / w) if calibrated else tp / k
    return total / P
