"""Patch-classifying CNN: conv blocks -> fully connected blocks -> softmax."""
from dataclasses import asdict, dataclass

import numpy as np

from .. import kernels
from ..errors import ConfigError, DimensionError, NumericError
from .layers import (
    BatchNorm,
    Conv2D,
    Dense,
    Dropout,
    Flatten,
    MaxPool2,
    ReLU,
    softmax,
    softmax_cross_entropy,
)

_DTYPES = {"float32": np.float32, "float64": np.float64}


@dataclass
class ModelConfig:
    """Architecture hyperparameters.

    Block ``b`` (0-based) uses ``base_filters * 2**b`` filters.  With the
    defaults the layer stack is 6 conv + 2 hidden dense + 1 output dense.
    """

    base_filters: int = 16
    conv_blocks: int = 3
    kernel: int = 3
    fc_sizes: tuple = (128, 64)
    dropout: float = 0.25
    input_size: int = 64
    input_channels: int = 1
    classes: int = 2
    seed: int = 0
    dtype: str = "float32"
    bn_momentum: float = 0.9

    def __post_init__(self):
        self.fc_sizes = tuple(int(s) for s in self.fc_sizes)

    def validate(self):
        if self.conv_blocks < 1:
            raise ConfigError("model.conv_blocks must be >= 1")
        if self.base_filters < 1:
            raise ConfigError("model.base_filters must be >= 1")
        if not 0 <= self.dropout < 1:
            raise ConfigError("model.dropout must be in [0, 1)")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ConfigError("model.kernel must be a positive odd integer")
        if self.classes != 2:
            raise ConfigError("model.classes must be 2 (vessel / non-vessel)")
        if self.dtype not in _DTYPES:
            raise ConfigError(f"model.dtype must be one of {sorted(_DTYPES)}")
        if any(s < 1 for s in self.fc_sizes):
            raise ConfigError("model.fc_sizes entries must be >= 1")
        if self.final_spatial() < 1:
            raise ConfigError(
                f"model.conv_blocks: spatial size underflow, {self.input_size}px input cannot take "
                f"{self.conv_blocks} 2x2 pooling stages")

    def final_spatial(self):
        size = self.input_size
        for _ in range(self.conv_blocks):
            size //= 2
        return size

    def filters(self, block):
        return self.base_filters * 2 ** block

    def to_dict(self):
        d = asdict(self)
        d["fc_sizes"] = list(self.fc_sizes)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


class Model:
    """Ordered layer list plus mode flag (``"train"`` or ``"infer"``)."""

    def __init__(self, cfg, layers, dropout_rng):
        self.cfg = cfg
        self.layers = layers
        self.mode = "infer"
        self.dropout_rng = dropout_rng

    @property
    def dtype(self):
        return _DTYPES[self.cfg.dtype]

    def named_parameters(self):
        for layer in self.layers:
            for key, value in layer.params.items():
                yield f"{layer.name}.{key}", layer, key, value

    def named_buffers(self):
        for layer in self.layers:
            for key, value in layer.buffers.items():
                yield f"{layer.name}.{key}", layer, key, value

    def state_dict(self):
        state = {name: value for name, _, _, value in self.named_parameters()}
        state.update({name: value for name, _, _, value in self.named_buffers()})
        return state

    def load_state_dict(self, state):
        expected = set(self.state_dict())
        if set(state) != expected:
            missing = sorted(expected - set(state))
            extra = sorted(set(state) - expected)
            raise ConfigError(f"state mismatch: missing={missing} unexpected={extra}")
        for name, layer, key, value in list(self.named_parameters()):
            layer.params[key] = np.array(state[name], dtype=self.dtype).reshape(value.shape)
        for name, layer, key, value in list(self.named_buffers()):
            layer.buffers[key] = np.array(state[name], dtype=self.dtype).reshape(value.shape)
        self.zero_grad()

    def gradients(self):
        return {f"{layer.name}.{key}": layer.grads[key]
                for layer in self.layers for key in layer.params}

    def zero_grad(self):
        for layer in self.layers:
            layer.zero_grad()

    def astype(self, dtype):
        """Cast parameters and buffers in place; ``dtype`` is ``"float32"`` or ``"float64"``."""
        self.cfg.dtype = dtype
        for layer in self.layers:
            layer.astype(_DTYPES[dtype])
        return self

    def num_parameters(self):
        return sum(v.size for _, _, _, v in self.named_parameters())

    def describe(self):
        """One line per layer; used in checkpoint metadata and ``report``."""
        lines = []
        for layer in self.layers:
            shapes = ", ".join(f"{k}{tuple(v.shape)}" for k, v in layer.params.items())
            lines.append(f"{layer.name:<12} {layer.kind:<10} {shapes}")
        return "\n".join(lines)

    def _as_nhwc(self, batch):
        x = np.asarray(batch, dtype=self.dtype)
        size, ch = self.cfg.input_size, self.cfg.input_channels
        if x.ndim == 3 and ch == 1:
            x = x[..., None]
        elif x.ndim == 4:
            x = np.moveaxis(x, 1, -1)  # NCHW in, NHWC internally
        if x.ndim != 4 or x.shape[1:] != (size, size, ch):
            raise DimensionError(
                f"expected batch of shape (B, {ch}, {size}, {size}), got {np.shape(batch)}")
        return np.ascontiguousarray(x)

    def logits(self, batch, mode=None, check=False):
        train = (mode or self.mode) == "train"
        x = self._as_nhwc(batch)
        if not train:
            return self._infer_logits(x)
        for layer in self.layers:
            x = layer.forward(x, train)
            if check and not np.all(np.isfinite(x)):
                raise NumericError(f"non-finite activation after layer {layer.name}")
        return x

    def _infer_logits(self, x):
        # conv/dense -> bn -> relu runs as one op with the bn affine folded
        # into the weights; dropout is the identity.
        layers = self.layers
        i = 0
        while i < len(layers):
            layer = layers[i]
            fusable = (i + 2 < len(layers) and layer.kind in ("conv", "dense")
                       and layers[i + 1].kind == "batchnorm" and layers[i + 2].kind == "relu")
            if fusable:
                scale, shift = layers[i + 1].folded()
                w = layer.params["weight"] * scale
                b = layer.params["bias"] * scale + shift
                if layer.kind == "conv":
                    x = kernels.conv2d_forward(x, w, b, relu=True)
                else:
                    x = np.maximum(x @ w + b, 0)
                i += 3
                continue
            if layer.kind != "dropout":
                x = layer.forward(x, False)
            i += 1
        return x

    def forward(self, batch, mode=None):
        """Class probabilities, shape ``(B, 2)``; column 1 is the vessel class."""
        return softmax(self.logits(batch, mode))


def forward(model, batch, mode=None):
    return model.forward(batch, mode)


def build_model(cfg):
    """Instantiate the network described by ``cfg`` with seeded He-normal weights."""
    cfg.validate()
    dtype = _DTYPES[cfg.dtype]
    ss = np.random.SeedSequence(cfg.seed)
    init_seed, drop_seed = ss.spawn(2)
    rng = np.random.Generator(np.random.PCG64(init_seed))
    drop_rng = np.random.Generator(np.random.PCG64(drop_seed))
    layers = []
    cin = cfg.input_channels
    for b in range(cfg.conv_blocks):
        cout = cfg.filters(b)
        for s in range(2):
            tag = f"b{b + 1}s{s + 1}"
            layers.append(Conv2D(f"{tag}.conv", cin, cout, cfg.kernel, rng, dtype))
            layers.append(BatchNorm(f"{tag}.bn", cout, cfg.bn_momentum, dtype=dtype))
            layers.append(ReLU(f"{tag}.relu"))
            cin = cout
        layers.append(MaxPool2(f"b{b + 1}.pool"))
        layers.append(Dropout(f"b{b + 1}.drop", cfg.dropout, drop_rng))
    layers.append(Flatten("flatten"))
    fin = cfg.final_spatial() ** 2 * cin
    for i, size in enumerate(cfg.fc_sizes):
        tag = f"fc{i + 1}"
        layers.append(Dense(f"{tag}.dense", fin, size, rng, dtype))
        layers.append(BatchNorm(f"{tag}.bn", size, cfg.bn_momentum, dtype=dtype))
        layers.append(ReLU(f"{tag}.relu"))
        layers.append(Dropout(f"{tag}.drop", cfg.dropout, drop_rng))
        fin = size
    layers.append(Dense("out.dense", fin, cfg.classes, rng, dtype, scale=np.sqrt(1.0 / fin)))
    return Model(cfg, layers, drop_rng)


def loss_and_backward(model, batch, labels, check=True):
    """Mean cross-entropy on ``batch`` in train mode; fills every layer's grads.

    Gradients are accumulated from zero on each call.  Returns
    ``(loss, gradients)`` where ``gradients`` maps parameter names to arrays.
    """
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= model.cfg.classes):
        raise ValueError("labels must be 0 (non-vessel) or 1 (vessel)")
    model.zero_grad()
    logits = model.logits(batch, mode="train", check=check)
    loss, dout = softmax_cross_entropy(logits, labels.astype(np.int64))
    if check and not np.isfinite(loss):
        raise NumericError("non-finite loss at layer out.dense")
    for layer in reversed(model.layers):
        dout = layer.backward(dout)
    if check:
        for name, g in model.gradients().items():
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient in layer {name.rsplit('.', 1)[0]}")
    return loss, model.gradients()
