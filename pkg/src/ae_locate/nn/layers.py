"""Layers with explicit forward/backward passes on float64 numpy arrays.

Every layer caches what its backward pass needs during ``forward`` and
accumulates parameter gradients into ``self.grads`` (overwritten, not
summed, per backward call).
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import StructuralError, UsageError


def xavier_normal(shape, fan_in: int, fan_out: int, rng: np.random.Generator) -> np.ndarray:
    std = np.sqrt(2.0 / (fan_in + fan_out))
    return rng.normal(0.0, std, size=shape)


def xavier_init(fan_in: int, fan_out: int, seed: int, shape=None) -> np.ndarray:
    """Xavier-normal tensor, shape ``(fan_out, fan_in)`` unless given."""
    if fan_in < 1 or fan_out < 1:
        raise ValueError("fans must be >= 1")
    shape = (fan_out, fan_in) if shape is None else shape
    return xavier_normal(shape, fan_in, fan_out, np.random.default_rng(seed))


def conv_output_size(n: int, kernel: int, stride: int, pad: int) -> int:
    return (n + 2 * pad - kernel) // stride + 1


class Layer:
    kind = "layer"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self._cache = None

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dout: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _take_cache(self):
        if self._cache is None:
            raise UsageError(f"{self.kind}: backward called before forward")
        return self._cache

    def output_shape(self, shape: tuple) -> tuple:
        return shape


class Conv2D(Layer):
    kind = "conv2d"

    def __init__(self, in_channels: int, out_channels: int, kernel: int = 3, stride: int = 1,
                 pad: int = 1, rng: np.random.Generator | None = None):
        super().__init__()
        self.in_channels, self.out_channels = in_channels, out_channels
        self.kernel, self.stride, self.pad = kernel, stride, pad
        rng = rng or np.random.default_rng(0)
        k2 = kernel * kernel
        self.params["weight"] = xavier_normal((out_channels, in_channels, kernel, kernel),
                                              in_channels * k2, out_channels * k2, rng)
        self.params["bias"] = np.zeros(out_channels)
        # off for the first layer of a network: nobody consumes d(loss)/d(input)
        self.input_grad = True

    def output_shape(self, shape):
        c, h, w = shape
        if c != self.in_channels:
            raise StructuralError(f"conv2d expects {self.in_channels} channels, got {c}")
        return (self.out_channels, conv_output_size(h, self.kernel, self.stride, self.pad),
                conv_output_size(w, self.kernel, self.stride, self.pad))

    def forward(self, x, train=False):
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise StructuralError(f"conv2d expects (B, {self.in_channels}, H, W), got {x.shape}")
        b = x.shape[0]
        k, s, p = self.kernel, self.stride, self.pad
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
        win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::s, ::s]
        ho, wo = win.shape[2], win.shape[3]
        # columns as (C*k*k, B*Ho*Wo): the gather stays contiguous along W
        cols = win.transpose(1, 4, 5, 0, 2, 3).reshape(-1, b * ho * wo)
        wmat = self.params["weight"].reshape(self.out_channels, -1)
        out = wmat @ cols + self.params["bias"][:, None]
        self._cache = (x.shape, xp.shape, cols, ho, wo)
        return out.reshape(self.out_channels, b, ho, wo).transpose(1, 0, 2, 3)

    def backward(self, dout):
        xshape, xpshape, cols, ho, wo = self._take_cache()
        b, c = xshape[0], self.in_channels
        k, s, p = self.kernel, self.stride, self.pad
        dmat = dout.transpose(1, 0, 2, 3).reshape(self.out_channels, -1)
        self.grads["weight"] = (dmat @ cols.T).reshape(self.params["weight"].shape)
        self.grads["bias"] = dmat.sum(axis=1)
        if not self.input_grad:
            return None
        if s == 1 and 2 * p == k - 1:
            # "same" convolution: dx is a full correlation of dout with the flipped kernel
            dp = np.pad(dout, ((0, 0), (0, 0), (p, p), (p, p)))
            win = sliding_window_view(dp, (k, k), axis=(2, 3))
            dcols = win.transpose(1, 4, 5, 0, 2, 3).reshape(-1, b * ho * wo)
            wflip = self.params["weight"][:, :, ::-1, ::-1].transpose(1, 0, 2, 3).reshape(c, -1)
            return (wflip @ dcols).reshape(c, b, ho, wo).transpose(1, 0, 2, 3)
        dcols = (self.params["weight"].reshape(self.out_channels, -1).T @ dmat).reshape(c, k, k, b, ho, wo)
        dxp = np.zeros(xpshape)
        for i in range(k):
            for j in range(k):
                dxp[:, :, i:i + s * ho:s, j:j + s * wo:s] += dcols[:, i, j].transpose(1, 0, 2, 3)
        if p:
            dxp = dxp[:, :, p:-p, p:-p]
        return dxp


class MaxPool2D(Layer):
    """Non-overlapping ``size x size`` max pooling; trailing rows/cols are dropped."""

    kind = "maxpool2d"

    def __init__(self, size: int = 2):
        super().__init__()
        self.size = size

    def output_shape(self, shape):
        c, h, w = shape
        return (c, h // self.size, w // self.size)

    def forward(self, x, train=False):
        s = self.size
        b, c, h, w = x.shape
        ho, wo = h // s, w // s
        if ho == 0 or wo == 0:
            raise StructuralError(f"maxpool2d: input {h}x{w} smaller than window {s}")
        views = [x[:, :, i:ho * s:s, j:wo * s:s] for i in range(s) for j in range(s)]
        out = views[0].copy()
        arg = np.zeros(out.shape, dtype=np.uint8)
        for k, v in enumerate(views[1:], start=1):
            better = v > out  # strict: the first maximum keeps the gradient
            out[better] = v[better]
            arg[better] = k
        self._cache = (x.shape, arg)
        return out

    def backward(self, dout):
        xshape, arg = self._take_cache()
        s = self.size
        ho, wo = arg.shape[2], arg.shape[3]
        dx = np.zeros(xshape)
        for k in range(s * s):
            i, j = divmod(k, s)
            dx[:, :, i:ho * s:s, j:wo * s:s] = dout * (arg == k)
        return dx


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, train=False):
        mask = x > 0
        self._cache = mask
        return x * mask

    def backward(self, dout):
        return dout * self._take_cache()


class Dropout(Layer):
    """Inverted dropout; draws its mask from the generator it is given."""

    kind = "dropout"

    def __init__(self, rate: float = 0.25):
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise ValueError("dropout rate must lie in [0, 1)")
        self.rate = rate
        self.rng = np.random.default_rng(0)

    def forward(self, x, train=False):
        if not train or self.rate == 0.0:
            self._cache = 1.0
            return x
        keep = 1.0 - self.rate
        mask = (self.rng.random(x.shape) < keep) / keep
        self._cache = mask
        return x * mask

    def backward(self, dout):
        return dout * self._take_cache()


class Flatten(Layer):
    kind = "flatten"

    def forward(self, x, train=False):
        self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout):
        return dout.reshape(self._take_cache())

    def output_shape(self, shape):
        return (int(np.prod(shape)),)


class Dense(Layer):
    kind = "fully_connected"

    def __init__(self, fan_in: int, fan_out: int, rng: np.random.Generator | None = None):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.fan_in, self.fan_out = fan_in, fan_out
        self.params["weight"] = xavier_normal((fan_in, fan_out), fan_in, fan_out, rng)
        self.params["bias"] = np.zeros(fan_out)

    def output_shape(self, shape):
        if shape != (self.fan_in,):
            raise StructuralError(f"fully_connected expects ({self.fan_in},), got {shape}")
        return (self.fan_out,)

    def forward(self, x, train=False):
        if x.ndim != 2 or x.shape[1] != self.fan_in:
            raise StructuralError(f"fully_connected expects (B, {self.fan_in}), got {x.shape}")
        self._cache = x
        return x @ self.params["weight"] + self.params["bias"]

    def backward(self, dout):
        x = self._take_cache()
        self.grads["weight"] = x.T @ dout
        self.grads["bias"] = dout.sum(axis=0)
        return dout @ self.params["weight"].T


class BatchNorm1D(Layer):
    kind = "batch_norm"

    def __init__(self, features: int, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        self.features, self.momentum, self.eps = features, momentum, eps
        self.params["gamma"] = np.ones(features)
        self.params["beta"] = np.zeros(features)
        self.running_mean = np.zeros(features)
        self.running_var = np.ones(features)

    def forward(self, x, train=False):
        if x.ndim != 2 or x.shape[1] != self.features:
            raise StructuralError(f"batch_norm expects (B, {self.features}), got {x.shape}")
        # a single-sample batch has no spread to normalise by: use the running statistics
        train = train and x.shape[0] > 1
        if train:
            mu = x.mean(axis=0)
            var = x.var(axis=0)
            n = x.shape[0]
            unbiased = var * n / (n - 1)
            m = self.momentum
            self.running_mean = (1 - m) * self.running_mean + m * mu
            self.running_var = (1 - m) * self.running_var + m * unbiased
        else:
            mu, var = self.running_mean, self.running_var
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mu) * inv
        self._cache = (xhat, inv, train)
        return self.params["gamma"] * xhat + self.params["beta"]

    def backward(self, dout):
        xhat, inv, train = self._take_cache()
        gamma = self.params["gamma"]
        self.grads["gamma"] = (dout * xhat).sum(axis=0)
        self.grads["beta"] = dout.sum(axis=0)
        dxhat = dout * gamma
        if not train:
            return dxhat * inv
        n = dout.shape[0]
        return inv / n * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))


class Sequential(Layer):
    kind = "sequential"

    def __init__(self, layers: list[tuple[str, Layer]]):
        super().__init__()
        self.layers = layers

    def forward(self, x, train=False):
        for _, layer in self.layers:
            x = layer.forward(x, train)
        return x

    def backward(self, dout):
        for _, layer in reversed(self.layers):
            dout = layer.backward(dout)
        return dout

    def output_shape(self, shape):
        for _, layer in self.layers:
            shape = layer.output_shape(shape)
        return shape

    def named_layers(self, prefix: str = ""):
        for name, layer in self.layers:
            yield f"{prefix}{name}", layer


def mse_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared error over all entries and its gradient w.r.t. ``pred``."""
    diff = pred - target
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size
