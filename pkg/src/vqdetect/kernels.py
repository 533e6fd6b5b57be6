"""Kernel dispatch: compiled Cython extension when importable, numpy otherwise.

Set ``VQDETECT_PURE_PYTHON=1`` to force the numpy fallback.
"""
import os

import numpy as np

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("VQDETECT_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _pykernels


def _prep(a):
    if a.dtype not in (np.float32, np.float64):
        a = a.astype(np.float64)
    return np.ascontiguousarray(a)


def im2col(x, k, stride=1, pad=0):
    return _impl.im2col(_prep(x), int(k), int(stride), int(pad))


def col2im(cols, shape, k, stride=1, pad=0):
    return _impl.col2im(_prep(cols), tuple(int(s) for s in shape), int(k), int(stride), int(pad))


def nearest_code_scan(latents, codebook):
    """Exhaustive nearest-code scan (float64 accumulation, lowest-index ties)."""
    latents, codebook = _prep(latents), _prep(codebook)
    if latents.dtype != codebook.dtype:
        latents = latents.astype(np.float64)
        codebook = codebook.astype(np.float64)
    return _impl.nearest_code(latents, codebook)


def nearest_code(latents, codebook, chunk=4096):
    """Nearest codebook row per latent, exact, ties to the lowest index.

    Distances are screened with a float64 matrix product; any latent whose
    runner-up lies within the rounding bound of its best candidate is
    re-resolved with the exhaustive scan, so the answer always equals
    :func:`nearest_code_scan`.
    """
    latents = np.asarray(latents)
    codebook = np.asarray(codebook)
    if latents.ndim != 2 or codebook.ndim != 2 or latents.shape[1] != codebook.shape[1]:
        raise ValueError("latent and codebook dimensions differ")
    if codebook.shape[0] == 0:
        raise ValueError("empty codebook")
    lat = latents.astype(np.float64, copy=False)
    cb = codebook.astype(np.float64, copy=False)
    cb_sq = np.einsum("kd,kd->k", cb, cb)
    scale = cb_sq.max()
    idx = np.empty(lat.shape[0], dtype=np.int64)
    for start in range(0, lat.shape[0], chunk):
        block = lat[start:start + chunk]
        x_sq = np.einsum("nd,nd->n", block, block)
        approx = cb_sq[None, :] - 2.0 * (block @ cb.T)
        best = approx.argmin(axis=1)
        lo = approx[np.arange(block.shape[0]), best]
        # dot-product rounding is far below 1e-10 relative for any D we use
        tol = 1e-10 * (x_sq + scale) + 1e-300
        n_close = (approx <= (lo + tol)[:, None]).sum(axis=1)
        idx[start:start + chunk] = best
        amb = np.flatnonzero(n_close > 1)
        if amb.size:
            idx[start + amb] = nearest_code_scan(block[amb], cb)
    return idx


def using(backend):
    """Return a namespace of kernels for an explicit backend (benchmarks, tests)."""
    if backend == "python":
        return _pykernels
    if backend == "cython":
        from . import _ckernels

        return _ckernels
    raise ValueError(f"unknown backend {backend!r}")
