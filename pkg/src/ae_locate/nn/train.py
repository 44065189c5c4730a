"""Mini-batch training of AESLNet on normalized coordinates."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..errors import InputError, ParameterError, TrainingDiverged
from ..samples import SampleSet
from .layers import mse_loss
from .model import AESLNet
from .optim import OPTIMIZERS, Optimizer, make_optimizer

log = logging.getLogger(__name__)

SCHEDULES = ("step", "constant")
# "step": full rate, then x0.3 from 70 % and x0.1 from 90 % of the epochs
STEP_MILESTONES = ((0.7, 0.3), (0.9, 0.1))


@dataclass(frozen=True)
class HyperParams:
    optimizer: str = "rmsprop"
    batch_size: int = 23
    learning_rate: float = 1e-3
    epochs: int = 200
    schedule: str = "step"

    def __post_init__(self):
        if self.optimizer not in OPTIMIZERS:
            raise ParameterError(f"unknown optimizer {self.optimizer!r}")
        if self.batch_size < 1:
            raise ParameterError("batch_size must be >= 1")
        if not self.learning_rate >= 0:
            raise ParameterError("learning_rate must be >= 0")
        if self.epochs < 0:
            raise ParameterError("epochs must be >= 0")
        if self.schedule not in SCHEDULES:
            raise ParameterError(f"unknown learning-rate schedule {self.schedule!r}")

    def learning_rate_at(self, epoch: int) -> float:
        factor = 1.0
        if self.schedule == "step":
            for frac, f in STEP_MILESTONES:
                if epoch >= int(round(frac * self.epochs)):
                    factor = f
        return self.learning_rate * factor


@dataclass
class TrainResult:
    model: AESLNet
    optimizer: Optimizer
    loss_history: list[float] = field(default_factory=list)


def train_step(model: AESLNet, opt: Optimizer, x: np.ndarray, y: np.ndarray) -> float:
    model.train()
    pred = model.forward(x)
    loss, dpred = mse_loss(pred, y)
    model.backward(dpred)
    opt.step(model.parameters(), model.gradients())
    return loss


def train(model: AESLNet, data: SampleSet, hp: HyperParams, seed: int = 0,
          optimizer: Optimizer | None = None) -> TrainResult:
    """Shuffled mini-batch descent for ``hp.epochs`` epochs.

    The loss history holds the sample-weighted mean training loss of each
    epoch. Shuffling and dropout masks derive from ``seed`` only.
    """
    if len(data) == 0:
        raise InputError("training set is empty")
    opt = optimizer or make_optimizer(hp.optimizer, hp.learning_rate)
    shuffle_seq, dropout_seq = np.random.SeedSequence(seed).spawn(2)
    rng = np.random.default_rng(shuffle_seq)
    model.reseed_dropout(dropout_seq)
    history: list[float] = []
    n = len(data)
    for epoch in range(hp.epochs):
        opt.lr = hp.learning_rate_at(epoch)
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, hp.batch_size):
            idx = order[start:start + hp.batch_size]
            with np.errstate(over="ignore", invalid="ignore"):  # divergence is reported below
                loss = train_step(model, opt, data.x[idx], data.y[idx])
            if not np.isfinite(loss):
                raise TrainingDiverged(
                    f"loss became {loss} at epoch {epoch}, optimizer={hp.optimizer}, lr={opt.lr}")
            total += loss * len(idx)
        history.append(total / n)
        log.debug("epoch %d loss %.6g", epoch, history[-1])
    model.eval()
    return TrainResult(model, opt, history)


def evaluate_loss(model: AESLNet, data: SampleSet) -> float:
    pred = model.predict_normalized(data.x)
    return mse_loss(pred, data.y)[0]
