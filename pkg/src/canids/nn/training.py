"""Adam training loop with best-validation checkpointing.

Operates on (n, h, w, c) float32 batch tensors where the reconstruction
target is the input itself.  Deterministic for a fixed seed: the only
randomness is the per-epoch shuffle, drawn from one seeded generator.
"""

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import EmptyDataset, InvalidSpec, NonFiniteLoss, ShapeMismatch
from .model import CaeModel, mse_loss

logger = logging.getLogger(__name__)

__all__ = ["AdamState", "EpochLoss", "TrainConfig", "adam_step", "train", "write_loss_log"]


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    epochs: int = 100
    batch_size: int = 64
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-7
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise InvalidSpec(f"learning_rate must be positive, got {self.learning_rate}")
        if self.epochs < 1:
            raise InvalidSpec(f"epochs must be at least 1, got {self.epochs}")
        if self.batch_size < 1:
            raise InvalidSpec(f"batch_size must be at least 1, got {self.batch_size}")
        if not 0 <= self.adam_beta1 < 1 or not 0 <= self.adam_beta2 < 1:
            raise InvalidSpec("adam betas must lie in [0, 1)")


@dataclass
class AdamState:
    """First/second moment buffers plus the shared step counter."""

    m: list
    v: list
    step: int = 0

    @classmethod
    def for_params(cls, params: list) -> "AdamState":
        return cls(
            m=[np.zeros_like(p) for p in params],
            v=[np.zeros_like(p) for p in params],
        )


def adam_step(params: list, grads: list, state: AdamState, config: TrainConfig) -> AdamState:
    """One bias-corrected Adam update, applied to params in place."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeMismatch("params, grads and state must have matching lengths")
    b1, b2 = config.adam_beta1, config.adam_beta2
    state.step += 1
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ShapeMismatch(f"gradient shape {g.shape} does not match parameter {p.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * np.square(g)
        p -= config.learning_rate * (m / c1) / (np.sqrt(v / c2) + config.adam_epsilon)
    return state


@dataclass(frozen=True)
class EpochLoss:
    epoch: int
    train_loss: float
    val_loss: float | None = None


def _flat_params(model: CaeModel) -> list:
    out = []
    for k, b in zip(model.kernels, model.biases):
        if k is not None:
            out.append(k)
            out.append(b)
    return out


def _flat_grads(gks: list, gbs: list) -> list:
    out = []
    for gk, gb in zip(gks, gbs):
        if gk is not None:
            out.append(gk)
            out.append(gb)
    return out


def _mean_loss(model: CaeModel, x: np.ndarray, batch_size: int) -> float:
    total = 0.0
    for start in range(0, x.shape[0], batch_size):
        xb = x[start : start + batch_size]
        loss, _ = mse_loss(model.forward(xb), xb)
        total += loss * xb.shape[0]
    return total / x.shape[0]


@dataclass
class _Checkpoint:
    loss: float = math.inf
    kernels: list = field(default_factory=list)
    biases: list = field(default_factory=list)

    def maybe_update(self, loss: float, model: CaeModel) -> None:
        # strict < keeps the earliest epoch on ties
        if loss < self.loss:
            self.loss = loss
            self.kernels = [None if k is None else k.copy() for k in model.kernels]
            self.biases = [None if b is None else b.copy() for b in model.biases]


def train(
    model: CaeModel,
    train_x: np.ndarray,
    val_x: np.ndarray | None,
    config: TrainConfig,
) -> tuple[CaeModel, list[EpochLoss]]:
    """Train in place and return the best checkpoint plus per-epoch losses.

    The checkpoint is selected by validation loss, or by training loss
    when no validation tensor is given.  The passed-in model ends up in
    its final-epoch state; the returned model is the checkpoint copy.
    """
    if train_x is None or train_x.shape[0] == 0:
        raise EmptyDataset("no training blocks")
    have_val = val_x is not None and val_x.shape[0] > 0
    rng = np.random.default_rng(config.seed)
    params = _flat_params(model)
    state = AdamState.for_params(params)
    best = _Checkpoint()
    history: list[EpochLoss] = []
    n = train_x.shape[0]
    logger.info("training on %d blocks (%s validation) for %d epochs",
                n, f"{val_x.shape[0]}-block" if have_val else "no", config.epochs)
    for epoch in range(config.epochs):
        perm = rng.permutation(n)
        running = 0.0
        for start in range(0, n, config.batch_size):
            xb = train_x[perm[start : start + config.batch_size]]
            pred, tape = model.forward(xb, record=True)
            loss, grad = mse_loss(pred, xb)
            if not math.isfinite(loss):
                raise NonFiniteLoss(
                    f"loss {loss} at epoch {epoch + 1}, batch {start // config.batch_size}"
                )
            gks, gbs = model.backward(tape, grad)
            adam_step(params, _flat_grads(gks, gbs), state, config)
            running += loss * xb.shape[0]
        train_loss = running / n
        val_loss = _mean_loss(model, val_x, config.batch_size) if have_val else None
        history.append(EpochLoss(epoch + 1, train_loss, val_loss))
        best.maybe_update(val_loss if have_val else train_loss, model)
        logger.debug("epoch %d/%d: train %.6f val %s",
                     epoch + 1, config.epochs, train_loss,
                     "-" if val_loss is None else f"{val_loss:.6f}")
    logger.info("best monitored loss %.6f", best.loss)
    return CaeModel(model.specs, model.input_shape, best.kernels, best.biases), history


def write_loss_log(history: list[EpochLoss], path) -> None:
    """CSV loss log: epoch, train_loss, val_loss (blank without validation)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_loss"])
        for entry in history:
            val = "" if entry.val_loss is None else repr(entry.val_loss)
            writer.writerow([entry.epoch, repr(entry.train_loss), val])
