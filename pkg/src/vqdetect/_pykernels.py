"""Pure numpy versions of the hot kernels.

Column layout used by ``im2col``/``col2im``: rows are ordered ``(c, ki, kj)``
and columns ``(n, oi, oj)``, so a convolution is ``W.reshape(F, -1) @ cols``.
"""
import numpy as np

_CHUNK = 4096


def _out_size(size, k, stride, pad):
    return (size + 2 * pad - k) // stride + 1


def im2col(x, k, stride, pad):
    n, c, h, w = x.shape
    ho, wo = _out_size(h, k, stride, pad), _out_size(w, k, stride, pad)
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    cols = np.empty((c, k, k, n, ho, wo), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            patch = xp[:, :, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride]
            cols[:, i, j] = patch.transpose(1, 0, 2, 3)
    return cols.reshape(c * k * k, n * ho * wo)


def col2im(cols, shape, k, stride, pad):
    n, c, h, w = shape
    ho, wo = _out_size(h, k, stride, pad), _out_size(w, k, stride, pad)
    if cols.shape != (c * k * k, n * ho * wo):
        raise ValueError("column matrix does not match target shape")
    cols = cols.reshape(c, k, k, n, ho, wo)
    out = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for i in range(k):
        for j in range(k):
            out[:, :, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride] += (
                cols[:, i, j].transpose(1, 0, 2, 3)
            )
    if pad:
        out = out[:, :, pad:pad + h, pad:pad + w]
    return np.ascontiguousarray(out)


def nearest_code(latents, codebook):
    """Index of the nearest codebook row per latent; ties go to the lowest index.

    Squared distances are accumulated in float64, one coordinate at a time,
    so the result is bit-identical to the compiled kernel.
    """
    n, d = latents.shape
    if codebook.shape[1] != d:
        raise ValueError("latent and codebook dimensions differ")
    if codebook.shape[0] == 0:
        raise ValueError("empty codebook")
    lat = latents.astype(np.float64, copy=False)
    cb = codebook.astype(np.float64, copy=False)
    idx = np.empty(n, dtype=np.int64)
    for start in range(0, n, _CHUNK):
        block = lat[start:start + _CHUNK]
        acc = np.zeros((block.shape[0], cb.shape[0]))
        for t in range(d):
            diff = block[:, t, None] - cb[None, :, t]
            acc += diff * diff
        idx[start:start + _CHUNK] = np.argmin(acc, axis=1)
    return idx
