"""Independent reference implementations used by the tests."""
import itertools

import numpy as np


def conv2d_loops(x, w, stride=1, pad=0):
    n, c, h, wd = x.shape
    f, _, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1
    out = np.zeros((n, f, ho, wo))
    for b, o, i, j in itertools.product(range(n), range(f), range(ho), range(wo)):
        acc = 0.0
        for ch in range(c):
            for a in range(k):
                for q in range(k):
                    acc += xp[b, ch, i * stride + a, j * stride + q] * w[o, ch, a, q]
        out[b, o, i, j] = acc
    return out


def brute_force_nearest(latents, codebook):
    out = []
    for v in latents:
        best, best_j = None, None
        for j, e in enumerate(codebook):
            d = 0.0
            for a, b in zip(v, e):
                d += (float(a) - float(b)) ** 2
            if best is None or d < best:
                best, best_j = d, j
        out.append(best_j)
    return np.array(out)


def numeric_grad(f, arr, step=1e-5, idx=None):
    """Central differences of scalar ``f()`` w.r.t. entries ``idx`` of ``arr`` (mutated in place)."""
    flat = arr.reshape(-1)
    idx = range(flat.size) if idx is None else idx
    out = []
    for i in idx:
        old = flat[i]
        flat[i] = old + step
        fp = f()
        flat[i] = old - step
        fm = f()
        flat[i] = old
        out.append((fp - fm) / (2 * step))
    return np.array(out)


def rel_error(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return np.linalg.norm(a - b) / denom


def check_module_grads(loss_fn, params, rng, max_entries=12, step=1e-5):
    """Largest relative error between autodiff and central differences over ``params``.

    ``loss_fn`` builds the graph and returns a scalar Tensor. A random subset of
    at most ``max_entries`` entries per parameter is probed.
    """
    for p in params:
        p.grad = None
    loss_fn().backward()
    worst = 0.0
    for p in params:
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad.copy()
        n = p.data.size
        idx = rng.choice(n, size=min(n, max_entries), replace=False)
        numeric = numeric_grad(lambda: float(loss_fn().data), p.data, step, idx)
        worst = max(worst, rel_error(analytic.reshape(-1)[idx], numeric))
    return worst


def binomial_interval(k, n, z=1.959963984540054):
    """Wilson score interval for a binomial proportion."""
    if n == 0:
        return 0.0, 1.0
    p = k / n
    denom = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z * np.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return centre - half, centre + half
