"""Independent reference computations shared by unit and acceptance tests."""

import warnings

import numpy as np

from quadtcn.tcn import NetworkConfig, init_params, network_forward
from quadtcn.tcn.config import receptive_field


def quiet_config(**kw) -> NetworkConfig:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return NetworkConfig(**kw)


def random_config(rng, **overrides) -> NetworkConfig:
    kw = dict(
        num_blocks=int(rng.integers(1, 4)),
        kernel_size=int(rng.integers(1, 4)),
        channels=int(rng.integers(2, 7)),
        past_steps=int(rng.integers(1, 12)),
        future_steps=int(rng.integers(1, 8)),
        use_batchnorm=bool(rng.integers(0, 2)),
        shortened_gradient=bool(rng.integers(0, 2)),
        dilation_growth=str(rng.choice(["block", "layer"])),
        seed=int(rng.integers(0, 2**31)),
    )
    kw.update(overrides)
    return quiet_config(**kw)


def perturbed_params(config, rng):
    """Initial parameters with randomized BN scales, shifts and running statistics."""
    params, buffers = init_params(config)
    for name in params:
        if ".bn" in name or name.endswith("bias"):
            params[name] = rng.normal(size=params[name].shape)
    for name in buffers:
        buffers[name] = rng.random(buffers[name].shape) + (0.5 if name.endswith("var") else -0.5)
    return params, buffers


def direct_conv(x, w, b, dilation):
    """Loop-level causal convolution of one ``(C, T)`` sequence."""
    C, T = x.shape
    O, _, k = w.shape
    out = np.zeros((O, T))
    for o in range(O):
        for t in range(T):
            acc = b[o]
            for i in range(C):
                for j in range(k):
                    s = t - (k - 1 - j) * dilation
                    if s >= 0:
                        acc += w[o, i, j] * x[i, s]
            out[o, t] = acc
    return out


def positive_network(config):
    """Parameters under which every unit is active, so each in-range tap has a visible effect."""
    params, buffers = init_params(config)
    for name, p in params.items():
        params[name] = np.abs(p) + 0.1 if name.endswith("weight") else np.full_like(p, 0.1)
    return params, buffers


def impulse_horizon(config) -> int:
    """How many trailing input positions influence the last output, measured by perturbation.

    Perturbs every input row at each time index of a positive network and
    reports ``T - t_min`` for the earliest index that moves the final output.
    """
    params, buffers = positive_network(config)
    rng = np.random.default_rng(0)
    T = config.seq_len
    X = rng.random((1, config.input_channels, T)) + 0.5
    base = network_forward(X, config, params, buffers, "eval")[0, :, -1]
    earliest = T
    for t in range(T):
        Xp = X.copy()
        Xp[0, :, t] += 1.0
        if not np.array_equal(network_forward(Xp, config, params, buffers, "eval")[0, :, -1], base):
            earliest = t
            break
    return T - earliest


def causality_violations(config, params, buffers, rng) -> list:
    """Input times ``t`` whose perturbation altered any output at a time index < t."""
    P, T = config.past_steps, config.seq_len
    X = rng.normal(size=(2, config.input_channels, T))
    base = network_forward(X, config, params, buffers, "eval")
    bad = []
    for t in range(T):
        Xp = X.copy()
        Xp[:, :, t] += rng.normal(size=Xp[:, :, t].shape) * 3.0
        out = network_forward(Xp, config, params, buffers, "eval")
        earlier = [i for i in range(config.future_steps) if P + i < t]
        if earlier and not np.array_equal(out[:, :, earlier], base[:, :, earlier]):
            bad.append(t)
    return bad


def rf_for_horizon_test(rng) -> NetworkConfig:
    """A random config whose input window is longer than its receptive field."""
    cfg = random_config(rng, shortened_gradient=False)
    rf = receptive_field(cfg)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return cfg.replace(past_steps=rf + int(rng.integers(1, 4)))
