from __future__ import annotations

import numpy as np

from .errors import ArgumentError, DimensionError
from .tensor import Tensor, make_op


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of ``labels`` under softmax(``logits``)."""
    labels = np.asarray(labels)
    if logits.ndim != 2:
        raise DimensionError(f"logits must be (N, K), got {logits.shape}")
    n, k = logits.shape
    if labels.shape != (n,) or not np.issubdtype(labels.dtype, np.integer):
        raise ArgumentError(f"labels must be {n} integers, got shape {labels.shape} dtype {labels.dtype}")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ArgumentError(f"labels must lie in [0, {k}), got range [{labels.min()}, {labels.max()}]")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    rows = np.arange(n)
    loss = -logp[rows, labels].mean()

    def backward(g):
        d = np.exp(logp)
        d[rows, labels] -= 1.0
        return ((g / n) * d).astype(logits.dtype, copy=False),

    return make_op(np.asarray(loss, dtype=logits.dtype), (logits,), backward)
