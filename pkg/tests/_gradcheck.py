"""Central finite differences for gradient checks (float64 only)."""
import numpy as np

EPS = 1e-5
REL_TOL = 1e-3
ABS_FLOOR = 1e-9


def numeric_grad(f, x, eps=EPS):
    """d f / d x by central differences; ``f`` re-reads ``x`` in place."""
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        hi = f()
        flat[i] = old - eps
        lo = f()
        flat[i] = old
        gflat[i] = (hi - lo) / (2 * eps)
    return g


def rel_error(analytic, numeric):
    a, n = np.ravel(analytic), np.ravel(numeric)
    diff = np.linalg.norm(a - n)
    if diff < ABS_FLOOR:
        return 0.0
    return diff / max(np.linalg.norm(a), np.linalg.norm(n))


def away_from_zero(rng, shape, margin=0.1):
    """Random values with |x| >= margin (keeps ReLU kinks out of reach)."""
    x = rng.uniform(margin, 1.0, shape)
    return x * rng.choice([-1.0, 1.0], shape)


def distinct(rng, shape, gap=0.01):
    """Values that are pairwise at least ``gap`` apart (no max-pool ties)."""
    n = int(np.prod(shape))
    return (rng.permutation(n) * gap + rng.uniform(0, gap / 10, n)).reshape(shape) - n * gap / 2


# ------------------------------------------------------------ per-layer checks
# Each returns {tensor name: relative error} for one random seed.  The loss
# is a fixed random projection sum(out * proj) so every output matters.

def _layer_errors(layer, x, train=True):
    rng = np.random.default_rng(0)
    out = layer.forward(x, train)
    proj = rng.standard_normal(out.shape)

    def loss():
        return float(np.sum(layer.forward(x, train) * proj))

    layer.zero_grad()
    layer.forward(x, train)
    dx = layer.backward(proj)
    errors = {"x": rel_error(dx, numeric_grad(loss, x))}
    for key in layer.params:
        analytic = layer.grads[key].copy()
        errors[key] = rel_error(analytic, numeric_grad(loss, layer.params[key]))
    return errors


def check_conv(seed):
    from blcb.nn.layers import Conv2D

    rng = np.random.default_rng(seed)
    k = int(rng.choice([1, 3, 5]))
    layer = Conv2D("conv", int(rng.integers(1, 4)), int(rng.integers(1, 4)), k, rng, np.float64)
    layer.params["bias"] = rng.standard_normal(layer.params["bias"].shape)
    x = rng.standard_normal((2, int(rng.integers(3, 7)), int(rng.integers(3, 7)),
                             layer.params["weight"].shape[2]))
    return _layer_errors(layer, x)


def check_batchnorm(seed):
    from blcb.nn.layers import BatchNorm

    rng = np.random.default_rng(seed)
    c = int(rng.integers(1, 5))
    layer = BatchNorm("bn", c, dtype=np.float64)
    layer.params["gamma"] = rng.uniform(0.5, 1.5, c)
    layer.params["beta"] = rng.standard_normal(c)
    if seed % 2:
        x = rng.standard_normal((int(rng.integers(3, 6)), c)) * 2 + 1
    else:
        x = rng.standard_normal((2, 3, 3, c)) * 2 + 1
    return _layer_errors(layer, x)


def check_relu(seed):
    from blcb.nn.layers import ReLU

    rng = np.random.default_rng(seed)
    return _layer_errors(ReLU("relu"), away_from_zero(rng, (3, 4, 4, 2)))


def check_maxpool(seed):
    from blcb.nn.layers import MaxPool2

    rng = np.random.default_rng(seed)
    shape = (2, int(rng.integers(2, 7)), int(rng.integers(2, 7)), 2)
    return _layer_errors(MaxPool2("pool"), distinct(rng, shape))


def check_dropout(seed):
    from blcb.nn.layers import Dropout

    rng = np.random.default_rng(seed)
    layer = Dropout("drop", 0.25, np.random.default_rng(seed + 1))
    x = rng.standard_normal((4, 3, 3, 2))
    layer.forward(x, True)
    layer.frozen = True
    return _layer_errors(layer, x)


def check_dense(seed):
    from blcb.nn.layers import Dense

    rng = np.random.default_rng(seed)
    fin, fout = int(rng.integers(1, 8)), int(rng.integers(1, 6))
    layer = Dense("dense", fin, fout, rng, np.float64)
    layer.params["bias"] = rng.standard_normal(fout)
    return _layer_errors(layer, rng.standard_normal((3, fin)))


def check_softmax_ce(seed):
    from blcb.nn.layers import softmax_cross_entropy

    rng = np.random.default_rng(seed)
    logits = rng.standard_normal((5, 2)) * 3
    labels = rng.integers(0, 2, 5)
    _, grad = softmax_cross_entropy(logits, labels)
    num = numeric_grad(lambda: softmax_cross_entropy(logits, labels)[0], logits)
    return {"logits": rel_error(grad, num)}


LAYER_CHECKS = {
    "conv": check_conv,
    "batchnorm": check_batchnorm,
    "relu": check_relu,
    "maxpool": check_maxpool,
    "dropout": check_dropout,
    "dense": check_dense,
    "softmax_ce": check_softmax_ce,
}


def check_model(seed, batch=2, fc_sizes=()):
    """Every parameter of a tiny float64 model vs finite differences.

    Returns ``(errors, gradient norms, skipped)``.  Inside a whole network
    the inputs to ReLU and max-pool cannot be kept away from their switch
    points, so an entry whose stencil straddles one is detected (its
    differences at ``EPS`` and ``EPS / 2`` disagree) and left out;
    ``skipped`` counts them.  With batch 2 a hidden dense layer would feed a
    batch norm whose two outputs are always +-1, hiding every upstream
    gradient, so the batch-2 default has no hidden dense layer.
    """
    from blcb.nn.layers import softmax_cross_entropy
    from blcb.nn.model import ModelConfig, build_model, loss_and_backward

    cfg = ModelConfig(base_filters=2, conv_blocks=3, kernel=3, fc_sizes=fc_sizes,
                      input_size=8, seed=seed, dtype="float64")
    model = build_model(cfg)
    rng = np.random.default_rng(seed)
    for _, layer, key, value in model.named_parameters():
        if key in ("bias", "beta"):
            layer.params[key] = rng.standard_normal(value.shape) * 0.1
    x = rng.standard_normal((batch, 8, 8))
    labels = np.arange(batch) % 2
    loss_and_backward(model, x, labels)  # draw dropout masks
    for layer in model.layers:
        if layer.kind == "dropout":
            layer.frozen = True
    _, grads = loss_and_backward(model, x, labels)
    grads = {k: v.copy() for k, v in grads.items()}
    errors, norms, skipped = {}, {}, 0
    def loss():  # forward only; train-mode output ignores the running statistics
        return softmax_cross_entropy(model.logits(x, mode="train"), labels)[0]

    for name, layer, key, value in model.named_parameters():
        norms[name] = float(np.linalg.norm(grads[name]))
        num = numeric_grad(loss, layer.params[key])
        half = numeric_grad(loss, layer.params[key], EPS / 2)
        smooth = np.abs(num - half) <= 1e-6 * np.maximum(1.0, np.abs(num))
        skipped += int(np.sum(~smooth))
        errors[name] = rel_error(grads[name][smooth], num[smooth])
    return errors, norms, skipped
