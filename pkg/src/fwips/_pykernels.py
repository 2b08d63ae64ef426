"""Pure numpy kernels. Reference behaviour for the compiled ones in ``_ckernels``."""

import numpy as np


def squared_distances(S: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """T x M squared Euclidean distances, accumulated column by column.

    Summation runs over the fingerprint components in order so that results
    are bit-identical to a plain sequential loop.
    """
    D2 = np.zeros((Q.shape[0], S.shape[0]))
    for j in range(S.shape[1]):
        diff = Q[:, j, None] - S[None, :, j]
        D2 += diff * diff
    return D2


def knn_select(S: np.ndarray, Q: np.ndarray, k: int):
    """Indices and squared distances of the k nearest rows of S for each query.

    Rows are ordered by (distance, index) ascending.
    """
    D2 = squared_distances(S, Q)
    T, M = D2.shape
    idx = np.empty((T, k), dtype=np.int64)
    if k < M:
        kth = np.partition(D2, k - 1, axis=1)[:, k - 1]
    for t in range(T):
        d = D2[t]
        if k < M:
            less = np.flatnonzero(d < kth[t])
            tied = np.flatnonzero(d == kth[t])[: k - less.size]
            sel = np.concatenate([less, tied])
        else:
            sel = np.arange(M)
        idx[t] = sel[np.lexsort((sel, d[sel]))]
    return idx, np.take_along_axis(D2, idx, axis=1)


def layer_views(params: np.ndarray, widths):
    views = []
    pos = 0
    for n_in, n_out in zip(widths[:-1], widths[1:]):
        W = params[pos:pos + n_in * n_out].reshape(n_in, n_out)
        pos += n_in * n_out
        b = params[pos:pos + n_out]
        pos += n_out
        views.append((W, b))
    return views


def sigmoid(z):
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-z))


def train_epoch(params, widths, X, Y, order, batch_size, lr):
    """One pass of mini-batch gradient descent, updating ``params`` in place."""
    layers = layer_views(params, widths)
    last = len(layers) - 1
    for start in range(0, order.shape[0], batch_size):
        rows = order[start:start + batch_size]
        acts = [X[rows]]
        for m, (W, b) in enumerate(layers):
            z = acts[-1] @ W + b
            acts.append(z if m == last else sigmoid(z))
        s = -2.0 * (Y[rows] - acts[-1])
        B = rows.shape[0]
        grads = []
        for m in range(last, -1, -1):
            W, _ = layers[m]
            a_prev = acts[m]
            grads.append((a_prev.T @ s / B, s.sum(axis=0) / B))
            if m > 0:
                s = (s @ W.T) * a_prev * (1.0 - a_prev)
        for (W, b), (gW, gb) in zip(layers, reversed(grads)):
            W -= lr * gW
            b -= lr * gb
