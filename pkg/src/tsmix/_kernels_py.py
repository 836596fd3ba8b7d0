"""Pure-numpy row kernels.

Reference implementation of the fused kernels in ``_kernels.pyx``. Every
function takes C-contiguous float64 arrays of shape ``(rows, n)`` and
returns fresh arrays of the same layout.
"""

import numpy as np


def softmax_rows(x):
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    e /= e.sum(axis=1, keepdims=True)
    return e


def softmax_rows_backward(y, gy):
    dot = np.einsum("ij,ij->i", y, gy)[:, None]
    return y * (gy - dot)


def log_softmax_rows(x):
    shifted = x - x.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def layer_norm_rows(x, gain, bias, eps):
    """Return ``(out, xhat, rstd)``; ``rstd`` has shape ``(rows,)``."""
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    var = np.einsum("ij,ij->i", xc, xc) / x.shape[1]
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd[:, None]
    return xhat * gain + bias, xhat, rstd


def layer_norm_rows_backward(gout, xhat, rstd, gain):
    """Return ``(gx, ggain, gbias)``."""
    n = xhat.shape[1]
    gbias = gout.sum(axis=0)
    ggain = np.einsum("ij,ij->j", gout, xhat)
    gxhat = gout * gain
    a = gxhat.sum(axis=1, keepdims=True)
    b = np.einsum("ij,ij->i", gxhat, xhat)[:, None]
    gx = (gxhat - a / n - xhat * (b / n)) * rstd[:, None]
    return gx, ggain, gbias
