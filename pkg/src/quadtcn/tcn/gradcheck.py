"""Central finite-difference oracle for :func:`network_backward`."""

from __future__ import annotations

import numpy as np

from .network import network_backward


def numerical_gradients(X, Y, config, params, buffers, h=1e-5, mode="train", seed=None):
    """Central differences of the loss w.r.t. every parameter entry.

    ``seed`` re-seeds the dropout rng before every evaluation so that each
    perturbed forward pass sees the same masks.
    """
    def loss():
        rng = None if seed is None else np.random.default_rng(seed)
        return network_backward(X, Y, config, params, buffers, mode, rng)[0]

    out = {}
    for name, p in params.items():
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            lp = loss()
            p[idx] = old - h
            lm = loss()
            p[idx] = old
            g[idx] = (lp - lm) / (2.0 * h)
        out[name] = g
    return out


def relative_errors(analytic, numeric, floor_ratio=1e-3):
    """Per-tensor ``max|a - n| / max(max|a|, max|n|, floor)``.

    ``floor`` is ``floor_ratio`` times the largest gradient entry anywhere
    in the network, so tensors whose true gradient is exactly zero (conv
    biases feeding batch norm) are judged against the network's scale
    rather than against round-off.
    """
    scale = max(max(np.max(np.abs(a)) for a in analytic.values()),
                max(np.max(np.abs(n)) for n in numeric.values()))
    floor = floor_ratio * scale
    errs = {}
    for name, a in analytic.items():
        n = numeric[name]
        denom = max(np.max(np.abs(a)), np.max(np.abs(n)), floor, 1e-300)
        errs[name] = float(np.max(np.abs(a - n)) / denom)
    return errs
