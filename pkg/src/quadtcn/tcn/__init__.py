"""Fully convolutional sequence model with hand-written backpropagation."""

from .config import NetworkConfig, receptive_field, receptive_field_of
from .network import (
    TCN,
    compute_loss,
    init_params,
    network_backward,
    network_forward,
    param_count,
    update_running_stats,
)
from .optim import OptimizerState, optimizer_step
from .train import ArrayDataset, evaluate_loss, fit, predict, train_epoch

__all__ = [
    "NetworkConfig", "receptive_field", "receptive_field_of", "TCN", "compute_loss", "init_params",
    "network_backward", "network_forward", "param_count", "update_running_stats", "OptimizerState",
    "optimizer_step", "ArrayDataset", "evaluate_loss", "fit", "predict", "train_epoch",
]
