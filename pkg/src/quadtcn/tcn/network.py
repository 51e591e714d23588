"""The End2End-TCN: residual stack of causal dilated convolutions, loss and backprop.

Parameters and BN running statistics are plain ordered ``dict[str, ndarray]``
so that checkpoints, optimizers and gradient checks can walk them uniformly.
Public tensors are ``(B, C, T)``; internally activations are ``(C, B, T)``.
"""

from __future__ import annotations

import numpy as np

from ..errors import ConfigError, NumericFault, ShapeError
from . import layers
from .config import NetworkConfig, receptive_field

CONTROL_ROWS = slice(12, 16)


def block_in_channels(config: NetworkConfig) -> list[int]:
    ins, prev = [], config.input_channels
    for i in range(config.num_blocks):
        c = prev + (4 if config.shortened_gradient and i == config.injection_layer else 0)
        ins.append(c)
        prev = config.channels[i]
    return ins


def init_params(config: NetworkConfig):
    """Seeded fan-in scaled normal weights, zero biases, unit BN scales.

    Returns ``(params, buffers)``; buffers hold BN running statistics.
    """
    rng = np.random.default_rng(config.seed)
    dtype = np.dtype(config.dtype)
    k = config.kernel_size
    params, buffers = {}, {}

    def normal(shape, fan_in, gain):
        return (rng.standard_normal(shape) * np.sqrt(gain / fan_in)).astype(dtype)

    for i, (c_in, c_out) in enumerate(zip(block_in_channels(config), config.channels)):
        pre = f"block{i}"
        params[f"{pre}.conv1.weight"] = normal((c_out, c_in, k), c_in * k, 2.0)
        params[f"{pre}.conv1.bias"] = np.zeros(c_out, dtype)
        if config.use_batchnorm:
            params[f"{pre}.bn1.weight"] = np.ones(c_out, dtype)
            params[f"{pre}.bn1.bias"] = np.zeros(c_out, dtype)
        params[f"{pre}.conv2.weight"] = normal((c_out, c_out, k), c_out * k, 2.0)
        params[f"{pre}.conv2.bias"] = np.zeros(c_out, dtype)
        if config.use_batchnorm:
            params[f"{pre}.bn2.weight"] = np.ones(c_out, dtype)
            params[f"{pre}.bn2.bias"] = np.zeros(c_out, dtype)
        if c_in != c_out:
            params[f"{pre}.proj.weight"] = normal((c_out, c_in, 1), c_in, 1.0)
            params[f"{pre}.proj.bias"] = np.zeros(c_out, dtype)
        if config.use_batchnorm:
            for bn in ("bn1", "bn2"):
                buffers[f"{pre}.{bn}.running_mean"] = np.zeros(c_out, dtype)
                buffers[f"{pre}.{bn}.running_var"] = np.ones(c_out, dtype)
    c_last = config.channels[-1]
    params["out.weight"] = normal((config.output_channels, c_last, 1), c_last, 1.0)
    params["out.bias"] = np.zeros(config.output_channels, dtype)
    return params, buffers


def param_count(params) -> int:
    return int(sum(p.size for p in params.values()))


def _bn(x, params, buffers, name, train, cache, stats):
    out, c, batch = layers.batchnorm_forward(
        x, params[f"{name}.weight"], params[f"{name}.bias"], train,
        buffers.get(f"{name}.running_mean"), buffers.get(f"{name}.running_var"),
    )
    cache[name] = c
    if train:
        stats[name] = batch
    return out


def _forward(X, config: NetworkConfig, params, buffers, train, rng, keep_cache):
    X = np.asarray(X)
    if X.ndim != 3 or X.shape[1] != config.input_channels or X.shape[2] != config.seq_len:
        raise ShapeError(
            f"expected input (B, {config.input_channels}, {config.seq_len}), got {X.shape}"
        )
    if train and config.dropout_rate > 0 and rng is None:
        raise ConfigError("dropout in train mode needs an rng")
    dtype = np.dtype(config.dtype)
    P = config.past_steps
    h = np.ascontiguousarray(X.transpose(1, 0, 2), dtype=dtype)
    inject = None
    if config.shortened_gradient:
        inject = np.zeros((4,) + h.shape[1:], dtype)
        inject[:, :, P:] = h[CONTROL_ROWS, :, P:]
        h = h.copy()
        h[CONTROL_ROWS, :, P:] = 0.0

    cache, stats = {}, {}
    drop = config.dropout_rate if train else 0.0
    for i, (d1, d2) in enumerate(config.dilations()):
        pre = f"block{i}"
        if inject is not None and i == config.injection_layer:
            h = np.concatenate([h, inject], axis=0)
        x_in = h
        z, cache[f"{pre}.conv1"] = layers.conv_forward(
            x_in, params[f"{pre}.conv1.weight"], params[f"{pre}.conv1.bias"], d1)
        if config.use_batchnorm:
            z = _bn(z, params, buffers, f"{pre}.bn1", train, cache, stats)
        z, cache[f"{pre}.relu1"] = layers.relu_forward(z)
        z, cache[f"{pre}.drop1"] = layers.dropout_forward(z, drop, rng)
        z, cache[f"{pre}.conv2"] = layers.conv_forward(
            z, params[f"{pre}.conv2.weight"], params[f"{pre}.conv2.bias"], d2)
        if config.use_batchnorm:
            z = _bn(z, params, buffers, f"{pre}.bn2", train, cache, stats)
        z, cache[f"{pre}.relu2"] = layers.relu_forward(z)
        z, cache[f"{pre}.drop2"] = layers.dropout_forward(z, drop, rng)
        if f"{pre}.proj.weight" in params:
            res, cache[f"{pre}.proj"] = layers.conv_forward(
                x_in, params[f"{pre}.proj.weight"], params[f"{pre}.proj.bias"], 1)
        else:
            res = x_in
        h = z + res
        if not np.all(np.isfinite(h)):
            raise NumericFault(f"non-finite activations after block {i}")
    y, cache["out"] = layers.conv_forward(h, params["out.weight"], params["out.bias"], 1)
    out = np.ascontiguousarray(y[:, :, P:].transpose(1, 0, 2))
    if not np.all(np.isfinite(out)):
        raise NumericFault(f"non-finite activations in output layer (block {config.num_blocks})")
    if not keep_cache:
        cache = None
    return out, cache, stats


def network_forward(X, config: NetworkConfig, params, buffers, mode: str = "eval", rng=None):
    """Predictions ``(B, output_channels, F)``; column ``i`` estimates step ``t0 + 1 + i``."""
    if mode not in ("train", "eval"):
        raise ValueError("mode must be 'train' or 'eval'")
    out, _, _ = _forward(X, config, params, buffers, mode == "train", rng, keep_cache=False)
    return out


def compute_loss(Yhat, Y, kind: str = "L2", weights=None):
    """Mean reconstruction loss over batch, channels and steps, plus its gradient."""
    Yhat = np.asarray(Yhat)
    Y = np.asarray(Y)
    if Yhat.shape != Y.shape:
        raise ShapeError(f"prediction {Yhat.shape} and target {Y.shape} differ")
    e = Yhat - Y
    n = e.size
    if kind == "L1":
        return float(np.abs(e).sum() / n), np.sign(e) / e.dtype.type(n)
    if kind == "L2":
        return float((e * e).sum() / n), e * e.dtype.type(2.0 / n)
    if kind == "WL2":
        if weights is None:
            raise ConfigError("WL2 loss needs per-channel weights")
        w = np.asarray(weights, dtype=e.dtype).reshape(1, -1, 1)
        if w.shape[1] != e.shape[1]:
            raise ShapeError("one WL2 weight per channel required")
        return float((w * e * e).sum() / n), w * e * e.dtype.type(2.0 / n)
    raise ConfigError(f"unknown loss kind {kind!r}")


def network_backward(X, Y, config: NetworkConfig, params, buffers, mode: str = "train", rng=None):
    """Loss, exact gradients for every parameter, and the batch BN statistics.

    Returns ``(loss, grads, batch_stats)``; ``batch_stats`` is empty in eval mode.
    """
    train = mode == "train"
    Yhat, cache, stats = _forward(X, config, params, buffers, train, rng, keep_cache=True)
    loss, dY = compute_loss(Yhat, np.asarray(Y, dtype=Yhat.dtype), config.loss_kind, config.wl2_weights)

    grads = {}
    P = config.past_steps
    dtype = Yhat.dtype
    B = Yhat.shape[0]
    dy_full = np.zeros((config.output_channels, B, config.seq_len), dtype)
    dy_full[:, :, P:] = dY.transpose(1, 0, 2)
    dh, grads["out.weight"], grads["out.bias"] = layers.conv_backward(dy_full, params["out.weight"], cache["out"])

    dinject = None
    for i in reversed(range(config.num_blocks)):
        pre = f"block{i}"
        dz = layers.dropout_backward(dh, cache[f"{pre}.drop2"])
        dz = layers.relu_backward(dz, cache[f"{pre}.relu2"])
        if config.use_batchnorm:
            dz, grads[f"{pre}.bn2.weight"], grads[f"{pre}.bn2.bias"] = layers.batchnorm_backward(
                dz, cache[f"{pre}.bn2"])
        dz, grads[f"{pre}.conv2.weight"], grads[f"{pre}.conv2.bias"] = layers.conv_backward(
            dz, params[f"{pre}.conv2.weight"], cache[f"{pre}.conv2"])
        dz = layers.dropout_backward(dz, cache[f"{pre}.drop1"])
        dz = layers.relu_backward(dz, cache[f"{pre}.relu1"])
        if config.use_batchnorm:
            dz, grads[f"{pre}.bn1.weight"], grads[f"{pre}.bn1.bias"] = layers.batchnorm_backward(
                dz, cache[f"{pre}.bn1"])
        dx, grads[f"{pre}.conv1.weight"], grads[f"{pre}.conv1.bias"] = layers.conv_backward(
            dz, params[f"{pre}.conv1.weight"], cache[f"{pre}.conv1"])
        if f"{pre}.proj.weight" in params:
            dres, grads[f"{pre}.proj.weight"], grads[f"{pre}.proj.bias"] = layers.conv_backward(
                dh, params[f"{pre}.proj.weight"], cache[f"{pre}.proj"])
            dx += dres
        else:
            dx += dh
        if config.shortened_gradient and i == config.injection_layer:
            dinject = dx[-4:]
            dx = dx[:-4]
        dh = dx
    del dinject  # inputs are not trained

    ordered = {name: grads[name] for name in params}
    for name, g in ordered.items():
        if not np.all(np.isfinite(g)):
            raise NumericFault(f"non-finite gradient for parameter {name}")
    return loss, ordered, stats


def update_running_stats(buffers, stats, momentum: float = 0.1):
    """Exponential moving average of BN batch statistics (in place)."""
    for name, (mean, var) in stats.items():
        rm = buffers[f"{name}.running_mean"]
        rv = buffers[f"{name}.running_var"]
        rm *= 1.0 - momentum
        rm += momentum * mean.astype(rm.dtype)
        rv *= 1.0 - momentum
        rv += momentum * var.astype(rv.dtype)


class TCN:
    """Bundle of config, parameters and BN buffers with convenience methods."""

    def __init__(self, config: NetworkConfig, params=None, buffers=None):
        self.config = config
        if params is None:
            params, fresh_buffers = init_params(config)
            buffers = fresh_buffers if buffers is None else buffers
        self.params = params
        self.buffers = {} if buffers is None else buffers
        self.opt_state = None

    def __call__(self, X, mode="eval", rng=None):
        return network_forward(X, self.config, self.params, self.buffers, mode, rng)

    def loss_and_grads(self, X, Y, mode="train", rng=None):
        return network_backward(X, Y, self.config, self.params, self.buffers, mode, rng)

    @property
    def receptive_field(self) -> int:
        return receptive_field(self.config)

    def num_parameters(self) -> int:
        return param_count(self.params)
