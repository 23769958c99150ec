"""Autoencoder training loop: Adam + MSE, best-validation checkpointing."""

import copy
from dataclasses import dataclass

import numpy as np

from nslab.engine.checkpoint import Checkpoint
from nslab.engine.network import Network, backward_and_grads, build_autoencoder
from nslab.engine.optim import AdamState, adam_step
from nslab.errors import ShapeError, TrainingError
from nslab.rng import derive_rng


@dataclass
class TrainConfig:
    setup: str = "relu_maxpool"
    epochs: int = 20
    batch_size: int = 64
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def _as_batched(images, name: str) -> np.ndarray:
    x = np.asarray(images, dtype=np.float64)
    if x.ndim == 3:
        x = x[:, None, :, :]
    if x.ndim != 4:
        raise ShapeError(f"{name} must be (N, H, W) or (N, C, H, W), got {x.shape}")
    if x.shape[0] == 0:
        raise ShapeError(f"{name} is empty")
    return x


def _dataset_mse(net: Network, images: np.ndarray, batch_size: int) -> float:
    sq_sum = 0.0
    for lo in range(0, images.shape[0], batch_size):
        batch = images[lo : lo + batch_size]
        diff = net.forward(batch) - batch
        sq_sum += float(np.sum(diff * diff))
    return sq_sum / images.size


def train_autoencoder(trainset, valset, config: TrainConfig, seed: int) -> Checkpoint:
    """Train on (seed, config, data); returns the checkpoint with the lowest
    validation MSE across epochs. Bit-reproducible: initialization and
    shuffling derive from the seed alone."""
    train = _as_batched(trainset, "trainset")
    val = _as_batched(valset, "valset")
    spec = build_autoencoder(config.setup, input_shape=train.shape[1:])
    net = Network.initialized(spec, seed)
    state = AdamState(lr=config.lr, beta1=config.beta1, beta2=config.beta2, eps=config.eps)

    best_val = np.inf
    best_epoch = -1
    best_params = copy.deepcopy(net.params)
    history = []
    n = train.shape[0]
    for epoch in range(config.epochs):
        order = derive_rng(seed, "shuffle", epoch).permutation(n)
        epoch_sq = 0.0
        for lo in range(0, n, config.batch_size):
            batch = train[order[lo : lo + config.batch_size]]
            try:
                loss, grads = backward_and_grads(net, batch, batch)
            except ArithmeticError as exc:
                raise TrainingError(f"training diverged at epoch {epoch}: {exc}", epoch)
            adam_step(net.params, grads, state)
            epoch_sq += loss * batch.size
        val_mse = _dataset_mse(net, val, config.batch_size)
        if not np.isfinite(val_mse):
            raise TrainingError(f"validation loss non-finite at epoch {epoch}", epoch)
        history.append((epoch, epoch_sq / train.size, val_mse))
        if val_mse < best_val:
            best_val = val_mse
            best_epoch = epoch
            best_params = copy.deepcopy(net.params)

    return Checkpoint(
        spec=spec,
        params=best_params,
        seed=seed,
        epoch=best_epoch,
        val_loss=float(best_val),
        history=history,
    )
