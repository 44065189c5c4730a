"""Model checkpoints in the AESL tensor container."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from ..errors import FormatError
from ..fileio import read_tensors, write_tensors
from .model import AESLNet, Architecture
from .optim import OPTIMIZERS, Optimizer


def save_checkpoint(path: str | Path, model: AESLNet, optimizer: Optimizer | None = None) -> None:
    tensors: dict[str, np.ndarray] = {"meta.architecture": model.arch.to_vector()}
    tensors.update({f"param.{k}": v for k, v in model.parameters().items()})
    tensors.update({f"buffer.{k}": v for k, v in model.buffers().items()})
    if optimizer is not None:
        tensors["meta.learning_rate"] = np.array([optimizer.lr])
        tensors.update({f"optim.{optimizer.name}.{k}": v for k, v in optimizer.state().items()})
    write_tensors(path, tensors)


def load_checkpoint(path: str | Path) -> tuple[AESLNet, Optimizer | None]:
    tensors = read_tensors(path)
    try:
        arch = Architecture.from_vector(tensors["meta.architecture"])
    except (KeyError, IndexError, ValueError) as exc:
        raise FormatError(f"{path}: missing or bad architecture record") from exc
    model = AESLNet(arch)
    params = model.parameters()
    for name, arr in params.items():
        stored = tensors.get(f"param.{name}")
        if stored is None or stored.shape != arr.shape:
            raise FormatError(f"{path}: parameter {name} missing or misshapen")
        arr[...] = stored
    model.load_buffers({k[len("buffer."):]: v for k, v in tensors.items() if k.startswith("buffer.")})

    optimizer = None
    for name, cls in OPTIMIZERS.items():
        prefix = f"optim.{name}."
        state = {k[len(prefix):]: v for k, v in tensors.items() if k.startswith(prefix)}
        if state:
            optimizer = cls(float(tensors["meta.learning_rate"][0]))
            optimizer.load_state(state)
            break
    return model.eval(), optimizer
