"""In-place first-order optimizers over a name -> array parameter dict."""

from __future__ import annotations

import numpy as np


class Optimizer:
    name = "base"

    def __init__(self, lr: float):
        if lr < 0:
            raise ValueError("learning rate must be >= 0")
        self.lr = lr
        self.iterations = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.iterations += 1
        for k, p in params.items():
            self._update(k, p, grads[k])

    def _update(self, key, p, g):
        raise NotImplementedError

    def state(self) -> dict[str, np.ndarray]:
        return {"iterations": np.array([float(self.iterations)])}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        self.iterations = int(state["iterations"][0])


class SGD(Optimizer):
    name = "sgd"

    def _update(self, key, p, g):
        p -= self.lr * g


class RMSprop(Optimizer):
    name = "rmsprop"

    def __init__(self, lr: float, rho: float = 0.9, eps: float = 1e-8):
        super().__init__(lr)
        self.rho, self.eps = rho, eps
        self.v: dict[str, np.ndarray] = {}

    def _update(self, key, p, g):
        v = self.v.get(key)
        if v is None:
            v = self.v[key] = np.zeros_like(p)
        v *= self.rho
        v += (1.0 - self.rho) * g * g
        p -= self.lr * g / (np.sqrt(v) + self.eps)

    def state(self):
        out = super().state()
        out.update({f"v.{k}": v for k, v in self.v.items()})
        return out

    def load_state(self, state):
        super().load_state(state)
        self.v = {k[2:]: np.array(v) for k, v in state.items() if k.startswith("v.")}


class Adam(Optimizer):
    name = "adam"

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        super().__init__(lr)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def _update(self, key, p, g):
        if key not in self.m:
            self.m[key] = np.zeros_like(p)
            self.v[key] = np.zeros_like(p)
        m, v = self.m[key], self.v[key]
        m *= self.beta1
        m += (1.0 - self.beta1) * g
        v *= self.beta2
        v += (1.0 - self.beta2) * g * g
        t = self.iterations
        mhat = m / (1.0 - self.beta1 ** t)
        vhat = v / (1.0 - self.beta2 ** t)
        p -= self.lr * mhat / (np.sqrt(vhat) + self.eps)

    def state(self):
        out = super().state()
        out.update({f"m.{k}": v for k, v in self.m.items()})
        out.update({f"v.{k}": v for k, v in self.v.items()})
        return out

    def load_state(self, state):
        super().load_state(state)
        self.m = {k[2:]: np.array(v) for k, v in state.items() if k.startswith("m.")}
        self.v = {k[2:]: np.array(v) for k, v in state.items() if k.startswith("v.")}


OPTIMIZERS = {"sgd": SGD, "rmsprop": RMSprop, "adam": Adam}


def make_optimizer(name: str, lr: float) -> Optimizer:
    try:
        return OPTIMIZERS[name](lr)
    except KeyError:
        raise ValueError(f"unknown optimizer {name!r}; choose from {sorted(OPTIMIZERS)}") from None
