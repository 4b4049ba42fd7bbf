"""Pure-numpy kernels for the feed-forward classifier.

Mirrors the compiled ``hbfl._kernels`` module function for function; used
when the extension is not built or ``HBFL_PURE_PYTHON`` is set.
"""

from __future__ import annotations

import numpy as np

BCE_EPS = 1e-7
_P_LO = np.nextafter(0.0, 1.0)
_P_HI = np.nextafter(1.0, 0.0)


def _layers(values, sizes):
    out = []
    off = 0
    for nin, nout in zip(sizes[:-1], sizes[1:]):
        w = values[off : off + nin * nout].reshape(nin, nout)
        off += nin * nout
        b = values[off : off + nout]
        off += nout
        out.append((w, b))
    return out


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    e = np.exp(z[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _activations(layers, x):
    acts = [x]
    a = x
    last = len(layers) - 1
    for i, (w, b) in enumerate(layers):
        # overflow is caught downstream as a non-finite output
        with np.errstate(over="ignore", invalid="ignore"):
            z = a @ w + b
        a = np.maximum(z, 0.0) if i < last else z
        acts.append(a)
    return acts


def forward(values, sizes, x):
    acts = _activations(_layers(values, sizes), x)
    return np.clip(_sigmoid(acts[-1][:, 0]), _P_LO, _P_HI)


def _fwd_bwd(values, sizes, x, y):
    layers = _layers(values, sizes)
    acts = _activations(layers, x)
    p = _sigmoid(acts[-1][:, 0])
    n = x.shape[0]
    pc = np.clip(p, BCE_EPS, 1.0 - BCE_EPS)
    loss = float(np.mean(-(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc))))

    grad = np.empty_like(values)
    offsets = []
    off = 0
    for nin, nout in zip(sizes[:-1], sizes[1:]):
        offsets.append(off)
        off += nin * nout + nout
    delta = ((p - y) / n)[:, None]
    for l in range(len(layers) - 1, -1, -1):
        w, _ = layers[l]
        a_in = acts[l]
        nin, nout = w.shape
        o = offsets[l]
        grad[o : o + nin * nout] = (a_in.T @ delta).ravel()
        grad[o + nin * nout : o + nin * nout + nout] = delta.sum(axis=0)
        if l > 0:
            delta = (delta @ w.T) * (a_in > 0.0)
    return grad, loss


def batch_gradient(values, sizes, x, y):
    return _fwd_bwd(values, sizes, x, y)


def train(values, sizes, x, y, order, batch_size, lr, beta1, beta2, eps):
    """Mini-batch Adam over ``order`` (one row-index permutation per epoch).

    Returns ``(params, bad_epoch, bad_batch)``; the indices are -1 unless a
    non-finite gradient stopped training early.
    """
    w = np.array(values, dtype=np.float64, copy=True)
    m = np.zeros_like(w)
    v = np.zeros_like(w)
    n = x.shape[0]
    t = 0
    for e in range(order.shape[0]):
        rows_e = order[e]
        for bi, start in enumerate(range(0, n, batch_size)):
            rows = rows_e[start : start + batch_size]
            g, _ = _fwd_bwd(w, sizes, x[rows], y[rows])
            if not np.all(np.isfinite(g)):
                return w, e, bi
            t += 1
            bc1 = 1.0 - beta1**t
            bc2 = 1.0 - beta2**t
            m = beta1 * m + (1.0 - beta1) * g
            v = beta2 * v + (1.0 - beta2) * (g * g)
            w -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return w, -1, -1
