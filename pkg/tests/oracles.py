"""Independent reference implementations used only by the tests.

Plain Python loops straight from the loss definitions, plus a central
finite-difference gradient. Deliberately share no code with the package.
"""

import math

import numpy as np


def _dot(a, b):
    return sum(x * y for x, y in zip(a, b))


def _sqdist(a, b):
    return sum((x - y) ** 2 for x, y in zip(a, b))


def clip_loop(images, texts, tau):
    n = len(images)
    left = 0.0
    for j in range(n):
        num = math.exp(_dot(images[j], texts[j]) / tau)
        den = sum(math.exp(_dot(images[j], texts[k]) / tau) for k in range(n))
        left += math.log(num / den)
    right = 0.0
    for k in range(n):
        num = math.exp(_dot(images[k], texts[k]) / tau)
        den = sum(math.exp(_dot(images[j], texts[k]) / tau) for j in range(n))
        right += math.log(num / den)
    return -left / (2 * n) - right / (2 * n)


def uniform_loop(rows):
    n = len(rows)
    s = sum(math.exp(-2 * _sqdist(rows[j], rows[k])) for j in range(n) for k in range(n))
    return math.log(s / n)


def xuniform_loop(images, texts):
    n = len(images)
    s = sum(math.exp(-2 * _sqdist(images[j], texts[k]))
            for j in range(n) for k in range(n) if k != j)
    return math.log(s / n)


def align_loop(images, texts):
    return sum(_sqdist(a, b) for a, b in zip(images, texts)) / len(images)


def composite_loop(images, texts, tau, weights):
    wc, wu, wx, wa = weights
    total = 0.0
    if wc:
        total += wc * clip_loop(images, texts, tau)
    if wu:
        total += wu * 0.5 * (uniform_loop(images) + uniform_loop(texts))
    if wx:
        total += wx * xuniform_loop(images, texts)
    if wa:
        total += wa * align_loop(images, texts)
    return total


def central_difference(f, arrays, h=1e-5):
    """Gradient of scalar ``f()`` w.r.t. every entry of each array (perturbed in place)."""
    grads = []
    for x in arrays:
        g = np.zeros_like(x)
        for idx in np.ndindex(x.shape):
            orig = x[idx]
            x[idx] = orig + h
            fp = f()
            x[idx] = orig - h
            fm = f()
            x[idx] = orig
            g[idx] = (fp - fm) / (2 * h)
        grads.append(g)
    return grads


def max_relative_error(analytic, numeric, floor=1e-6):
    """Largest per-entry |a - n| / max(|a|, |n|, floor)."""
    worst = 0.0
    for a, n in zip(analytic, numeric):
        a = np.asarray(a)
        n = np.asarray(n)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


def unit_rows(rng, n, d):
    x = rng.standard_normal((n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)
