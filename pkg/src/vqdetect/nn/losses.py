"""Variational autoencoder loss terms.

These are kept for reference and testing; the vector-quantized model trains
on reconstruction MSE plus commitment instead.
"""
import numpy as np

from . import tensor as T
from .tensor import Tensor


def kl_diag_gaussian(f, g):
    """KL divergence of N(f, diag(g)) from N(0, I).

    ``0.5 * sum(g + f**2 - 1 - ln g)``. Accepts tensors or arrays; ``g`` is a
    variance vector and must be strictly positive.
    """
    f = f if isinstance(f, Tensor) else Tensor(f, dtype=np.float64)
    g = g if isinstance(g, Tensor) else Tensor(g, dtype=np.float64)
    if f.shape != g.shape:
        raise ValueError(f"mean and variance shapes differ: {f.shape} vs {g.shape}")
    if np.any(g.data <= 0):
        raise ValueError("variance must be strictly positive")
    inner = g + T.square(f) - 1.0 - T.log(g)
    return T.tsum(inner) * 0.5


def vae_total_loss(x, x_tilde, f, g, beta):
    """Squared L2 reconstruction error plus ``beta`` times the Gaussian KL term."""
    x = x if isinstance(x, Tensor) else Tensor(x, dtype=np.float64)
    x_tilde = x_tilde if isinstance(x_tilde, Tensor) else Tensor(x_tilde, dtype=np.float64)
    if x.shape != x_tilde.shape:
        raise ValueError(f"input and reconstruction shapes differ: {x.shape} vs {x_tilde.shape}")
    fidelity = T.tsum(T.square(x - x_tilde))
    return fidelity + kl_diag_gaussian(f, g) * float(beta)
