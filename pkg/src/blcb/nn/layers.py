"""Layers with hand-written backward passes.

Activations are NHWC ``(batch, height, width, channels)`` for the
convolutional part and ``(batch, features)`` after flattening.  Every layer
caches what its backward pass needs during a training-mode forward call.
"""
import numpy as np

from .. import kernels


class Layer:
    """Base class.  ``params``/``grads`` map short names to arrays."""

    kind = "layer"

    def __init__(self, name):
        self.name = name
        self.params = {}
        self.grads = {}
        self.buffers = {}

    def forward(self, x, train):
        raise NotImplementedError

    def backward(self, dout):
        raise NotImplementedError

    def zero_grad(self):
        for key, value in self.params.items():
            self.grads[key] = np.zeros_like(value)

    def astype(self, dtype):
        for d in (self.params, self.buffers):
            for key in d:
                d[key] = d[key].astype(dtype)
        self.zero_grad()

    def __repr__(self):
        return f"{type(self).__name__}({self.name!r})"


class Conv2D(Layer):
    """Stride-1 convolution with zero 'same' padding; weight is ``(k, k, Cin, Cout)``."""

    kind = "conv"

    def __init__(self, name, cin, cout, k, rng, dtype=np.float32):
        super().__init__(name)
        if k % 2 != 1:
            raise ValueError("kernel size must be odd for same padding")
        self.k = k
        fan_in = cin * k * k
        w = rng.standard_normal((k, k, cin, cout)) * np.sqrt(2.0 / fan_in)
        self.params = {"weight": w.astype(dtype), "bias": np.zeros(cout, dtype)}
        self.zero_grad()

    def forward(self, x, train):
        if train:
            self._x = x
        return kernels.conv2d_forward(x, self.params["weight"], self.params["bias"])

    def backward(self, dout):
        x, self._x = self._x, None
        dx, dw, db = kernels.conv2d_backward(x, self.params["weight"], dout)
        self.grads["weight"] += dw
        self.grads["bias"] += db
        return dx


class BatchNorm(Layer):
    """Per-channel batch normalization over every axis except the last."""

    kind = "batchnorm"

    def __init__(self, name, channels, momentum=0.9, eps=1e-5, dtype=np.float32):
        super().__init__(name)
        self.momentum = momentum
        self.eps = eps
        self.params = {"gamma": np.ones(channels, dtype), "beta": np.zeros(channels, dtype)}
        self.buffers = {"running_mean": np.zeros(channels, dtype),
                        "running_var": np.ones(channels, dtype)}
        self.zero_grad()

    def forward(self, x, train):
        gamma, beta = self.params["gamma"], self.params["beta"]
        if not train:
            scale, shift = self.folded()
            return x * scale + shift
        out, xhat, mean, var = kernels.batchnorm_train_forward(x, gamma, beta, self.eps)
        m = self.momentum
        count = x.size // x.shape[-1]
        unbiased = var * (count / max(count - 1, 1))
        self.buffers["running_mean"] = (m * self.buffers["running_mean"]
                                        + (1 - m) * mean).astype(x.dtype)
        self.buffers["running_var"] = (m * self.buffers["running_var"]
                                       + (1 - m) * unbiased).astype(x.dtype)
        self._cache = (xhat, 1.0 / np.sqrt(var + self.eps))
        return out

    def backward(self, dout):
        xhat, inv = self._cache
        self._cache = None
        dx, dgamma, dbeta = kernels.batchnorm_backward(dout, xhat, self.params["gamma"], inv)
        self.grads["gamma"] += dgamma
        self.grads["beta"] += dbeta
        return dx

    def folded(self):
        """Inference-mode ``(scale, shift)`` so that ``bn(x) == x * scale + shift``."""
        scale = self.params["gamma"] / np.sqrt(self.buffers["running_var"] + self.eps)
        shift = self.params["beta"] - self.buffers["running_mean"] * scale
        return scale, shift


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, train):
        out = np.maximum(x, 0)
        if train:
            self._mask = x > 0
        return out

    def backward(self, dout):
        mask, self._mask = self._mask, None
        return dout * mask


class MaxPool2(Layer):
    kind = "maxpool"

    def forward(self, x, train):
        out, arg = kernels.maxpool2_forward(x)
        if train:
            self._cache = (arg, x.shape)
        return out

    def backward(self, dout):
        arg, shape = self._cache
        self._cache = None
        return kernels.maxpool2_backward(dout, arg, shape)


class Dropout(Layer):
    """Inverted dropout.  ``frozen=True`` replays the last mask (gradient checks)."""

    kind = "dropout"

    def __init__(self, name, p, rng):
        super().__init__(name)
        if not 0 <= p < 1:
            raise ValueError("dropout rate must be in [0, 1)")
        self.p = p
        self.rng = rng
        self.frozen = False
        self.mask = None

    def forward(self, x, train):
        if not train or self.p == 0:
            return x
        if not (self.frozen and self.mask is not None and self.mask.shape == x.shape):
            keep = self.rng.random(x.shape) >= self.p
            self.mask = keep.astype(x.dtype) / x.dtype.type(1 - self.p)
        return x * self.mask

    def backward(self, dout):
        if self.p == 0:
            return dout
        return dout * self.mask


class Flatten(Layer):
    kind = "flatten"

    def forward(self, x, train):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout):
        return dout.reshape(self._shape)


class Dense(Layer):
    kind = "dense"

    def __init__(self, name, fin, fout, rng, dtype=np.float32, scale=None):
        super().__init__(name)
        std = np.sqrt(2.0 / fin) if scale is None else scale
        w = rng.standard_normal((fin, fout)) * std
        self.params = {"weight": w.astype(dtype), "bias": np.zeros(fout, dtype)}
        self.zero_grad()

    def forward(self, x, train):
        if train:
            self._x = x
        return x @ self.params["weight"] + self.params["bias"]

    def backward(self, dout):
        x, self._x = self._x, None
        self.grads["weight"] += x.T @ dout
        self.grads["bias"] += dout.sum(axis=0)
        return dout @ self.params["weight"].T


def log_softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax(logits):
    return np.exp(log_softmax(logits))


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy of integer ``labels`` and the gradient w.r.t. ``logits``."""
    n = logits.shape[0]
    logp = log_softmax(logits)
    loss = -logp[np.arange(n), labels].mean()
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1
    grad /= n
    return float(loss), grad
