"""Tensor layers, the AESLNet model, optimizers and training."""

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .layers import mse_loss, xavier_init
from .model import AESLNet, Architecture
from .optim import SGD, Adam, RMSprop, make_optimizer
from .train import HyperParams, TrainResult, evaluate_loss, train


def predict(model: AESLNet, channels: np.ndarray, width: float, height: float) -> np.ndarray:
    """Source coordinates in mm for one (4, H, W) sample or a (B, 4, H, W) batch.

    Raw network output is scaled by the plate size without clamping.
    """
    x = np.asarray(channels, dtype=np.float64)
    single = x.ndim == 3
    out = model.predict_normalized(x[None] if single else x) * np.array([width, height])
    return out[0] if single else out


__all__ = [
    "AESLNet", "Architecture", "HyperParams", "TrainResult", "SGD", "RMSprop", "Adam",
    "make_optimizer", "train", "evaluate_loss", "predict", "mse_loss", "xavier_init",
    "save_checkpoint", "load_checkpoint",
]
