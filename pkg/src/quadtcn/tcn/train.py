"""Mini-batch training and evaluation loops."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DataError, ShapeError
from .network import TCN, network_backward, network_forward, compute_loss, update_running_stats
from .optim import OptimizerState, optimizer_step

BN_MOMENTUM = 0.1


@dataclass(frozen=True)
class ArrayDataset:
    """Network inputs ``(N, C_in, T)`` with targets ``(N, C_out, F)``."""

    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        if self.inputs.ndim != 3 or self.targets.ndim != 3 or len(self.inputs) != len(self.targets):
            raise ShapeError(f"inputs {self.inputs.shape} / targets {self.targets.shape} do not pair up")

    def __len__(self):
        return len(self.inputs)


def train_epoch(dataset: ArrayDataset, model: TCN, opt_state: OptimizerState, batch_size: int, rng):
    """One shuffled pass; updates ``model`` in place and returns ``(opt_state, mean_loss)``."""
    n = len(dataset)
    if n == 0:
        raise DataError("cannot train on an empty dataset")
    order = rng.permutation(n)
    total = 0.0
    for start in range(0, n, batch_size):
        idx = np.sort(order[start:start + batch_size])
        X, Y = dataset.inputs[idx], dataset.targets[idx]
        loss, grads, stats = network_backward(X, Y, model.config, model.params, model.buffers, "train", rng)
        model.params, opt_state = optimizer_step(model.params, grads, opt_state)
        update_running_stats(model.buffers, stats, BN_MOMENTUM)
        total += loss * len(idx)
    return opt_state, total / n


def predict(model: TCN, inputs, batch_size: int = 256) -> np.ndarray:
    """Eval-mode predictions in fixed-size chunks (fixed reduction order)."""
    outs = [network_forward(inputs[i:i + batch_size], model.config, model.params, model.buffers, "eval")
            for i in range(0, len(inputs), batch_size)]
    return np.concatenate(outs)


def evaluate_loss(dataset: ArrayDataset, model: TCN, batch_size: int = 256) -> float:
    if len(dataset) == 0:
        raise DataError("cannot evaluate on an empty dataset")
    Yhat = predict(model, dataset.inputs, batch_size)
    loss, _ = compute_loss(Yhat, dataset.targets.astype(Yhat.dtype), model.config.loss_kind,
                           model.config.wl2_weights)
    return loss


def fit(dataset: ArrayDataset, model: TCN, epochs: int, batch_size: int = 32, lr: float = 1e-3,
        seed: int = 0, callback=None):
    """Train for ``epochs``; returns the per-epoch training losses."""
    rng = np.random.default_rng(seed)
    opt = OptimizerState.for_params(model.params, lr=lr)
    losses = []
    for epoch in range(epochs):
        opt, loss = train_epoch(dataset, model, opt, batch_size, rng)
        losses.append(loss)
        if callback is not None:
            callback(epoch, loss)
    model.opt_state = opt
    return losses
