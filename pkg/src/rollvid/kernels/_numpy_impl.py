"""Pure-numpy reference implementations of the hot kernels.

These are the fallback backend and the semantic ground truth the compiled
extension is tested against.
"""

import numpy as np


def attention(q, k, v):
    """Scaled-dot-product attention, single head.

    Args:
        q: queries, [nq, d] or batched [b, nq, d]
        k: keys,    [nk, d] or batched [b, nk, d]
        v: values,  [nk, d] or batched [b, nk, d]

    Returns:
        softmax(q @ k.T / sqrt(d)) @ v, same leading shape as q.
    """
    squeeze = q.ndim == 2
    if squeeze:
        q, k, v = q[None], k[None], v[None]
    scores = q @ np.swapaxes(k, -1, -2) / np.sqrt(q.shape[-1])
    scores -= scores.max(axis=-1, keepdims=True)
    weights = np.exp(scores)
    weights /= weights.sum(axis=-1, keepdims=True)
    out = weights @ v
    return out[0] if squeeze else out


def attention_weights(q, k):
    """Softmax attention weight matrix, [nq, nk] (or batched [b, nq, nk])."""
    squeeze = q.ndim == 2
    if squeeze:
        q, k = q[None], k[None]
    scores = q @ np.swapaxes(k, -1, -2) / np.sqrt(q.shape[-1])
    scores -= scores.max(axis=-1, keepdims=True)
    weights = np.exp(scores)
    weights /= weights.sum(axis=-1, keepdims=True)
    return weights[0] if squeeze else weights


def otsu_split(weights, centers):
    """Best histogram split index by inter-class variance.

    Args:
        weights: occupancy per bin, [nbins] float64
        centers: representative value per bin, [nbins] float64

    Returns:
        Split index k in [1, nbins-1] maximizing w0*w1*(mu0-mu1)^2, where
        class 0 is bins [0, k) and class 1 is bins [k, nbins).  Ties break
        toward the smallest k.
    """
    total = weights.sum()
    mass = weights * centers
    cum_w = np.cumsum(weights)[:-1]
    cum_m = np.cumsum(mass)[:-1]
    w0 = cum_w / total
    w1 = 1.0 - w0
    with np.errstate(divide="ignore", invalid="ignore"):
        mu0 = cum_m / cum_w
        mu1 = (mass.sum() - cum_m) / (total - cum_w)
        var_between = w0 * w1 * (mu0 - mu1) ** 2
    var_between = np.where((cum_w > 0) & (cum_w < total), var_between, 0.0)
    # argmax returns the first maximum, i.e. the lowest split index on ties
    return int(np.argmax(var_between)) + 1
