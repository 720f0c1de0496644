"""Convergence diagnostics."""

import numpy as np

from ..errors import DegenerateSampleError, DomainError


def gelman_rubin(chains) -> float:
    """Split-chain potential scale reduction factor.

    Parameters
    ----------
    chains : array_like, shape (m, n)
        ``m >= 2`` chains of ``n >= 10`` draws of one scalar parameter.

    Returns
    -------
    float
        ``sqrt(var_plus / W)`` computed on the ``2m`` half-chains, where
        ``W`` is the mean within-chain variance and ``var_plus`` the pooled
        variance estimate ``(n-1)/n W + B/n``.
    """
    x = np.asarray(chains, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise DomainError("need at least two chains")
    if x.shape[1] < 10:
        raise DomainError("need at least ten draws per chain")
    half = x.shape[1] // 2
    split = np.concatenate([x[:, :half], x[:, x.shape[1] - half:]], axis=0)
    n = split.shape[1]
    w = np.mean(np.var(split, axis=1, ddof=1))
    if w == 0:
        raise DegenerateSampleError("all chains are constant")
    b = n * np.var(split.mean(axis=1), ddof=1)
    var_plus = (n - 1) / n * w + b / n
    return float(np.sqrt(var_plus / w))
