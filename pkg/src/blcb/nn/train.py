"""Mini-batch training with Adam, and batched inference over patch sets."""
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from ..balancing import Sampler
from ..errors import ConfigError
from .model import loss_and_backward

log = logging.getLogger(__name__)


@dataclass
class OptimizerConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def validate(self):
        if not self.lr > 0:
            raise ConfigError("train.lr must be > 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("train betas must be in [0, 1)")
        return self

    def to_dict(self):
        return asdict(self)


class Adam:
    def __init__(self, model, cfg):
        self.model = model
        self.cfg = cfg.validate()
        self.t = 0
        self.m = {name: np.zeros_like(v) for name, _, _, v in model.named_parameters()}
        self.v = {name: np.zeros_like(v) for name, _, _, v in model.named_parameters()}

    def step(self):
        c = self.cfg
        self.t += 1
        # bias corrections folded into the step size
        lr_t = c.lr * np.sqrt(1 - c.beta2 ** self.t) / (1 - c.beta1 ** self.t)
        for name, layer, key, p in self.model.named_parameters():
            g = layer.grads[key]
            m, v = self.m[name], self.v[name]
            m *= c.beta1
            m += (1 - c.beta1) * g
            v *= c.beta2
            v += (1 - c.beta2) * g * g
            p -= (lr_t * m / (np.sqrt(v) + c.eps)).astype(p.dtype, copy=False)


def _batches(n, batch_size):
    return [(i, min(i + batch_size, n)) for i in range(0, n, batch_size)]


def evaluate(model, patches, batch_size=256):
    """``(mean loss, accuracy)`` in inference mode."""
    if len(patches) == 0:
        return float("nan"), float("nan")
    probs = predict_proba(model, patches, batch_size, return_both=True)
    labels = patches.labels.astype(np.int64)
    logp = np.log(np.clip(probs, 1e-12, 1.0))
    loss = -float(np.mean(logp[np.arange(len(labels)), labels]))
    acc = float(np.mean(np.argmax(probs, axis=1) == labels))
    return loss, acc


RECAL_STREAM = 2_000_003


def recalibrate_bn(model, patches, batch_size=64, max_batches=32, seed=0):
    """Replace batch-norm running statistics by pooled statistics of the trained net.

    Dropout is switched off and each batch is normalized with its own
    statistics, as in training.  The running averages collected during
    training mix in stale weights and dropout-inflated variances, so the
    inference network would otherwise see shifted activations.
    """
    bns = [layer for layer in model.layers if layer.kind == "batchnorm"]
    if not bns or len(patches) == 0 or max_batches < 1:
        return model
    order = Sampler([seed, RECAL_STREAM]).permutation(len(patches))
    order = order[:batch_size * max_batches]
    acc = {layer.name: [0.0, 0.0, 0] for layer in bns}
    for lo, hi in _batches(len(order), batch_size):
        h = model._as_nhwc(patches.windows(order[lo:hi]))
        for layer in model.layers:
            if layer.kind == "dropout":
                continue
            if layer.kind == "batchnorm":
                h64 = h.reshape(-1, h.shape[-1]).astype(np.float64)
                a = acc[layer.name]
                a[0] = a[0] + h64.sum(axis=0)
                a[1] = a[1] + np.square(h64).sum(axis=0)
                a[2] += h64.shape[0]
                mean, var = h64.mean(axis=0), h64.var(axis=0)
                h = ((h - mean) / np.sqrt(var + layer.eps) * layer.params["gamma"]
                     + layer.params["beta"]).astype(h.dtype)
            else:
                h = layer.forward(h, False)
    for layer in bns:
        total, sq, n = acc[layer.name]
        mean = total / n
        var = np.maximum(sq / n - mean ** 2, 0.0) * (n / max(n - 1, 1))
        layer.buffers["running_mean"] = mean.astype(model.dtype)
        layer.buffers["running_var"] = var.astype(model.dtype)
    return model


def train(model, train_set, val_set=None, epochs=3, batch_size=64, optim=None, seed=0,
          progress=None, bn_batches=32):
    """Train in place; returns ``(model, history)`` with the model in infer mode.

    Each epoch visits ``train_set`` in a fresh seeded order.  After the last
    epoch the batch-norm statistics are re-estimated on up to ``bn_batches``
    training batches (0 keeps the running averages).  ``history`` is a list
    of per-epoch dicts (epoch, train_loss, val_loss, val_acc).
    """
    if batch_size < 1:
        raise ConfigError("train.batch_size must be >= 1")
    if epochs < 0:
        raise ConfigError("train.epochs must be >= 0")
    if epochs and len(train_set) == 0:
        raise ConfigError("training set is empty")
    if len(train_set) and train_set.labels.min() < 0:
        raise ConfigError("training set contains unlabeled patches")
    opt = Adam(model, optim or OptimizerConfig())
    history = []
    labels = train_set.labels.astype(np.int64)
    for epoch in range(epochs):
        order = Sampler([seed, epoch]).permutation(len(train_set))
        model.mode = "train"
        total = 0.0
        for lo, hi in _batches(len(order), batch_size):
            idx = order[lo:hi]
            x = train_set.windows(idx)
            loss, _ = loss_and_backward(model, x, labels[idx])
            opt.step()
            total += loss * (hi - lo)
            if progress:
                progress(epoch, hi, len(order), loss)
        model.mode = "infer"
        if epoch == epochs - 1:
            recalibrate_bn(model, train_set, batch_size, bn_batches, seed)
        train_loss = total / len(order)
        val_loss, val_acc = evaluate(model, val_set) if val_set is not None else (np.nan, np.nan)
        row = {"epoch": epoch + 1, "train_loss": train_loss,
               "val_loss": val_loss, "val_acc": val_acc}
        history.append(row)
        log.info("epoch %d: train_loss %.4f val_loss %.4f val_acc %.4f",
                 epoch + 1, train_loss, val_loss, val_acc)
    model.mode = "infer"
    return model, history


def _predict_range(model, patches, lo, hi, batch_size):
    out = np.empty((hi - lo, 2))
    for a in range(lo, hi, batch_size):
        b = min(a + batch_size, hi)
        out[a - lo:b - lo] = model.forward(patches.windows(np.arange(a, b)), "infer")
    return out


_WORKER = {}


def _worker_init(model, patches):
    _WORKER["model"], _WORKER["patches"] = model, patches
    os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")


def _worker_run(args):
    lo, hi, batch_size = args
    return _predict_range(_WORKER["model"], _WORKER["patches"], lo, hi, batch_size)


def predict_proba(model, patches, batch_size=256, jobs=1, return_both=False):
    """Vessel probability per record, in record order.

    Batches are always cut at multiples of ``batch_size`` from the start, so
    the result does not depend on ``jobs``.
    """
    n = len(patches)
    if batch_size < 1:
        raise ConfigError("batch_size must be >= 1")
    if n == 0:
        out = np.empty((0, 2))
    elif jobs <= 1 or n <= batch_size:
        out = _predict_range(model, patches, 0, n, batch_size)
    else:
        per = -(-len(_batches(n, batch_size)) // jobs) * batch_size
        chunks = [(lo, min(lo + per, n), batch_size) for lo in range(0, n, per)]
        with ProcessPoolExecutor(jobs, initializer=_worker_init,
                                 initargs=(model, patches)) as pool:
            out = np.concatenate(list(pool.map(_worker_run, chunks)))
    return out if return_both else out[:, 1]
