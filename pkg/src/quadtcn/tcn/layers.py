"""Forward/backward primitives operating on channel-major ``(C, B, T)`` arrays.

Keeping channels leading lets a dilated convolution collapse into one GEMM of
shape ``(C_out, C_in*k) @ (C_in*k, B*T)``.
"""

from __future__ import annotations

import numpy as np

from ..errors import ShapeError

BN_EPS = 1e-5


def _shift(kernel_size, j, dilation):
    return (kernel_size - 1 - j) * dilation


def conv_forward(x, weight, bias, dilation):
    """Causal dilated convolution with implicit left zero padding.

    ``out[o, b, t] = bias[o] + sum_{i,j} weight[o, i, j] * x[i, b, t - (k-1-j)*dilation]``.
    Taps that reach entirely into the padding are skipped.
    """
    C, B, T = x.shape
    O, C_w, k = weight.shape
    if C != C_w:
        raise ShapeError(f"conv expects {C_w} input channels, got {C}")
    taps = [j for j in range(k) if _shift(k, j, dilation) < T]
    cols = np.zeros((C, len(taps), B, T), dtype=x.dtype)
    for n, j in enumerate(taps):
        s = _shift(k, j, dilation)
        if s == 0:
            cols[:, n] = x
        else:
            cols[:, n, :, s:] = x[:, :, :T - s]
    cols = cols.reshape(C * len(taps), B * T)
    w = weight[:, :, taps].reshape(O, C * len(taps))
    out = w @ cols
    out += bias[:, None]
    return out.reshape(O, B, T), (cols, taps, x.shape, dilation)


def conv_backward(dout, weight, cache):
    cols, taps, (C, B, T), dilation = cache
    O, _, k = weight.shape
    d2 = dout.reshape(O, B * T)
    dw = np.zeros_like(weight)
    dw[:, :, taps] = (d2 @ cols.T).reshape(O, C, len(taps))
    db = d2.sum(axis=1)
    w = weight[:, :, taps].reshape(O, C * len(taps))
    dcols = (w.T @ d2).reshape(C, len(taps), B, T)
    dx = np.zeros((C, B, T), dtype=dout.dtype)
    for n, j in enumerate(taps):
        s = _shift(k, j, dilation)
        if s == 0:
            dx += dcols[:, n]
        else:
            dx[:, :, :T - s] += dcols[:, n, :, s:]
    return dx, dw, db


def batchnorm_forward(x, gamma, beta, train, running_mean=None, running_var=None):
    """Per-channel normalization over batch and time."""
    C = x.shape[0]
    flat = x.reshape(C, -1)
    if train:
        mean = flat.mean(axis=1)
        var = flat.var(axis=1)
    else:
        mean, var = running_mean, running_var
    inv = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (flat - mean[:, None]) * inv[:, None]
    out = gamma[:, None] * xhat + beta[:, None]
    cache = (xhat, inv, gamma, train)
    return out.reshape(x.shape), cache, (mean, var)


def batchnorm_backward(dout, cache):
    xhat, inv, gamma, train = cache
    C = dout.shape[0]
    d = dout.reshape(C, -1)
    dgamma = np.sum(d * xhat, axis=1)
    dbeta = d.sum(axis=1)
    dxhat = d * gamma[:, None]
    if train:
        n = d.shape[1]
        dx = (inv[:, None] / n) * (
            n * dxhat - dxhat.sum(axis=1, keepdims=True) - xhat * np.sum(dxhat * xhat, axis=1, keepdims=True)
        )
    else:
        dx = dxhat * inv[:, None]
    return dx.reshape(dout.shape), dgamma, dbeta


def relu_forward(x):
    mask = x > 0
    return x * mask, mask


def relu_backward(dout, mask):
    return dout * mask


def dropout_forward(x, rate, rng):
    if rate <= 0.0 or rng is None:
        return x, None
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / x.dtype.type(1.0 - rate)
    return x * keep, keep


def dropout_backward(dout, keep):
    return dout if keep is None else dout * keep
