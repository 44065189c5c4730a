"""AESLNet: four per-sensor feature branches feeding a fused regression head."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..errors import StructuralError
from .layers import BatchNorm1D, Conv2D, Dense, Dropout, Flatten, MaxPool2D, ReLU, Sequential

N_SENSORS = 4


@dataclass(frozen=True)
class Architecture:
    image_size: int = 64
    conv_widths: tuple[int, ...] = (8, 16, 32, 64)
    branch_features: int = 128
    head_widths: tuple[int, ...] = (256, 128, 64, 32)
    dropout: float = 0.25
    shared: bool = False

    def __post_init__(self):
        if self.image_size // 2 ** len(self.conv_widths) < 1:
            raise StructuralError(
                f"image size {self.image_size} too small for {len(self.conv_widths)} pooling stages")

    @property
    def flat_features(self) -> int:
        side = self.image_size // 2 ** len(self.conv_widths)
        return self.conv_widths[-1] * side * side

    def to_vector(self) -> np.ndarray:
        return np.array([self.image_size, len(self.conv_widths), *self.conv_widths,
                         self.branch_features, len(self.head_widths), *self.head_widths,
                         self.dropout, float(self.shared)], dtype=np.float64)

    @classmethod
    def from_vector(cls, v) -> Architecture:
        v = list(np.asarray(v, dtype=np.float64))
        image = int(v.pop(0))
        nc = int(v.pop(0))
        conv = tuple(int(v.pop(0)) for _ in range(nc))
        feats = int(v.pop(0))
        nh = int(v.pop(0))
        head = tuple(int(v.pop(0)) for _ in range(nh))
        return cls(image, conv, feats, head, float(v[0]), bool(v[1]))

    def as_dict(self) -> dict:
        return asdict(self)


def build_branch(arch: Architecture, rng: np.random.Generator) -> Sequential:
    layers = []
    c_in = 1
    for k, c_out in enumerate(arch.conv_widths):
        layers += [
            (f"conv{k}", Conv2D(c_in, c_out, 3, 1, 1, rng=rng)),
            (f"relu{k}", ReLU()),
            (f"pool{k}", MaxPool2D(2)),
        ]
        c_in = c_out
    layers += [
        ("dropout", Dropout(arch.dropout)),
        ("flatten", Flatten()),
        ("fc", Dense(arch.flat_features, arch.branch_features, rng=rng)),
        ("relu_fc", ReLU()),
    ]
    return Sequential(layers)


def build_head(arch: Architecture, rng: np.random.Generator) -> Sequential:
    width = N_SENSORS * arch.branch_features
    layers: list = [("bn", BatchNorm1D(width))]
    for k, w in enumerate(arch.head_widths):
        layers += [(f"fc{k}", Dense(width, w, rng=rng)), (f"relu{k}", ReLU())]
        width = w
    layers.append((f"fc{len(arch.head_widths)}", Dense(width, 2, rng=rng)))
    return Sequential(layers)


class AESLNet:
    """Parallel-branch regressor from (B, 4, H, W) scalogram stacks to (B, 2).

    With ``arch.shared`` a single branch is applied to every channel; this is
    the ablation variant with one convolution stack for all sensors.
    """

    def __init__(self, arch: Architecture = Architecture(), seed: int = 0):
        self.arch = arch
        ss = np.random.SeedSequence(seed)
        n_branch = 1 if arch.shared else N_SENSORS
        child = ss.spawn(n_branch + 2)
        self.branches = [build_branch(arch, np.random.default_rng(child[i])) for i in range(n_branch)]
        self.head = build_head(arch, np.random.default_rng(child[n_branch]))
        self.reseed_dropout(child[n_branch + 1])
        self.training = False
        self._first_convs = [branch.layers[0][1] for branch in self.branches]

    def reseed_dropout(self, seed) -> None:
        self.rng = np.random.default_rng(seed)
        for layer in self._all_layers():
            if isinstance(layer, Dropout):
                layer.rng = self.rng

    # --- bookkeeping -------------------------------------------------------

    def _named(self):
        for b, branch in enumerate(self.branches):
            yield from branch.named_layers(f"branch{b}.")
        yield from self.head.named_layers("head.")

    def _all_layers(self):
        return [layer for _, layer in self._named()]

    def parameters(self) -> dict[str, np.ndarray]:
        return {f"{lname}.{p}": arr for lname, layer in self._named() for p, arr in layer.params.items()}

    def gradients(self) -> dict[str, np.ndarray]:
        return {f"{lname}.{p}": layer.grads[p] for lname, layer in self._named() for p in layer.params}

    def buffers(self) -> dict[str, np.ndarray]:
        out = {}
        for lname, layer in self._named():
            if isinstance(layer, BatchNorm1D):
                out[f"{lname}.running_mean"] = layer.running_mean
                out[f"{lname}.running_var"] = layer.running_var
        return out

    def load_buffers(self, buffers: dict[str, np.ndarray]) -> None:
        for lname, layer in self._named():
            if isinstance(layer, BatchNorm1D):
                layer.running_mean = np.array(buffers[f"{lname}.running_mean"], dtype=np.float64)
                layer.running_var = np.array(buffers[f"{lname}.running_var"], dtype=np.float64)

    def branch_parameters(self, index: int) -> dict[str, np.ndarray]:
        prefix = f"branch{index}."
        return {k: v for k, v in self.parameters().items() if k.startswith(prefix)}

    def parameter_count(self) -> int:
        return sum(a.size for a in self.parameters().values())

    def train(self) -> AESLNet:
        self.training = True
        return self

    def eval(self) -> AESLNet:
        self.training = False
        return self

    # --- computation -------------------------------------------------------

    def _check_input(self, x: np.ndarray) -> None:
        s = self.arch.image_size
        if x.ndim != 4 or x.shape[1] != N_SENSORS:
            raise StructuralError(f"expected (B, {N_SENSORS}, {s}, {s}) input, got {x.shape}")
        if x.shape[2:] != (s, s):
            raise StructuralError(f"expected {s}x{s} channels, got {x.shape[2:]}")

    def features(self, x: np.ndarray) -> np.ndarray:
        """Concatenated branch outputs, shape (B, 4 * branch_features)."""
        self._check_input(x)
        b = x.shape[0]
        if self.arch.shared:
            stacked = x.transpose(1, 0, 2, 3).reshape(N_SENSORS * b, 1, *x.shape[2:])
            f = self.branches[0].forward(stacked, self.training)
            return f.reshape(N_SENSORS, b, -1).transpose(1, 0, 2).reshape(b, -1)
        return np.concatenate(
            [branch.forward(x[:, c:c + 1], self.training) for c, branch in enumerate(self.branches)],
            axis=1)

    def forward(self, x: np.ndarray) -> np.ndarray:
        return self.head.forward(self.features(x), self.training)

    __call__ = forward

    def backward(self, dout: np.ndarray, input_grad: bool = False) -> np.ndarray | None:
        """Backpropagate d(loss)/d(output) into every parameter gradient.

        Returns d(loss)/d(input) when ``input_grad`` is set, else ``None``.
        """
        for conv in self._first_convs:
            conv.input_grad = input_grad
        dfeat = self.head.backward(dout)
        b = dfeat.shape[0]
        nf = self.arch.branch_features
        if self.arch.shared:
            d = dfeat.reshape(b, N_SENSORS, nf).transpose(1, 0, 2).reshape(N_SENSORS * b, nf)
            dx = self.branches[0].backward(d)
            if dx is None:
                return None
            return dx.reshape(N_SENSORS, b, *dx.shape[2:]).transpose(1, 0, 2, 3)
        parts = [branch.backward(dfeat[:, c * nf:(c + 1) * nf]) for c, branch in enumerate(self.branches)]
        return np.concatenate(parts, axis=1) if input_grad else None

    def predict_normalized(self, x: np.ndarray, batch_size: int = 64) -> np.ndarray:
        was = self.training
        self.eval()
        try:
            return np.concatenate([self.forward(x[i:i + batch_size]) for i in range(0, len(x), batch_size)])
        finally:
            self.training = was
