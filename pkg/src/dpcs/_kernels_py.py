"""Pure-Python/numpy versions of the compiled kernels (same semantics)."""
from __future__ import annotations

import numpy as np

START_TOL = 1e-9
ZERO_KWH = 1e-12


def allocate(category, max_rate, remaining, started, power, dt, out):
    """Split ``power`` over one household's shiftable appliances in place.

    Running non-interruptible appliances are served first, then idle
    non-interruptible ones are started if the residual covers a full slot
    at their rate, then interruptible ones fill what is left in list order.
    Mutates ``remaining``, ``started`` and ``out``; returns the total draw.
    """
    n = len(category)
    residual = power
    for j in range(n):
        out[j] = 0.0
    for j in range(n):
        if category[j] == 1 and started[j] and remaining[j] > 0.0:
            draw = min(remaining[j] / dt, max_rate[j])
            out[j] = draw
            residual -= draw
    residual = max(residual, 0.0)
    for j in range(n):
        if category[j] == 1 and not started[j] and remaining[j] > 0.0:
            need = min(remaining[j] / dt, max_rate[j])
            if residual + START_TOL >= need:
                started[j] = 1
                out[j] = need
                residual = max(residual - need, 0.0)
    for j in range(n):
        if category[j] == 2 and remaining[j] > 0.0 and residual > 0.0:
            draw = min(remaining[j] / dt, max_rate[j], residual)
            out[j] = draw
            residual -= draw
    total = 0.0
    for j in range(n):
        if out[j] > 0.0:
            total += out[j]
            remaining[j] -= out[j] * dt
            if remaining[j] < ZERO_KWH:
                remaining[j] = 0.0
            if remaining[j] == 0.0 and category[j] == 1:
                started[j] = 0
    return total


def mlp_forward_vec(x, mean, inv_std, weights, biases, nonneg_output):
    h = (x - mean) * inv_std
    last = len(weights) - 1
    for k, (W, b) in enumerate(zip(weights, biases)):
        h = h @ W + b
        if k < last or nonneg_output:
            h = np.maximum(h, 0.0)
    return h
