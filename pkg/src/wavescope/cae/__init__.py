"""Convolutional autoencoder implemented directly on NumPy arrays."""

from .model import (
    CaeModel,
    CaeSpec,
    LayerSpec,
    OptimizerState,
    TrainHistory,
    adam_step,
    backward_and_step,
    build_cae,
    count_params,
    desk_preset,
    forward,
    latent_codes,
    layer_table,
    load_checkpoint,
    loss_and_grads,
    mae,
    mse_loss,
    paper_preset,
    r2,
    reconstruction_errors,
    save_checkpoint,
    train,
)

__all__ = [
    "CaeModel", "CaeSpec", "LayerSpec", "OptimizerState", "TrainHistory", "adam_step",
    "backward_and_step", "build_cae", "count_params", "desk_preset", "forward",
    "latent_codes", "layer_table", "load_checkpoint", "loss_and_grads", "mae", "mse_loss",
    "paper_preset", "r2", "reconstruction_errors", "save_checkpoint", "train",
]
