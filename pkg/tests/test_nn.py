import math

import numpy as np
import pytest

from _gradcheck import LAYER_CHECKS, check_model
from blcb.errors import ConfigError, DimensionError, NumericError
from blcb.nn.model import ModelConfig, build_model, loss_and_backward
from blcb.nn.layers import BatchNorm, Dropout, softmax_cross_entropy

TOL = 1e-3


@pytest.mark.parametrize("name", sorted(LAYER_CHECKS))
def test_layer_gradients(name):
    for seed in range(5):
        for pname, err in LAYER_CHECKS[name](seed).items():
            assert err < TOL, (name, seed, pname, err)


def test_model_gradients_nonvacuous():
    errors, norms, skipped = check_model(0)
    assert skipped <= 2
    assert max(errors.values()) < TOL
    # every conv weight receives signal, so the check is not trivially passing
    assert all(n > 1e-8 for k, n in norms.items() if k.endswith("conv.weight"))


def test_model_gradients_with_hidden_dense():
    errors, _, _ = check_model(1, batch=6, fc_sizes=(5,))
    assert max(errors.values()) < TOL


def test_default_architecture_shapes():
    cfg = ModelConfig()
    m = build_model(cfg)
    assert cfg.final_spatial() == 8
    flat_in = next(l for l in m.layers if l.name == "fc1.dense").params["weight"].shape[0]
    assert flat_in == 8 * 8 * 64 == 4096
    out = m.forward(np.zeros((3, 64, 64), np.float32))
    assert out.shape == (3, 2)
    assert np.allclose(out.sum(axis=1), 1, atol=1e-6)


@pytest.mark.parametrize("kwargs", [dict(conv_blocks=7), dict(conv_blocks=0), dict(kernel=4),
                                    dict(dropout=1.0), dict(classes=3), dict(dtype="float16")])
def test_bad_config(kwargs):
    with pytest.raises(ConfigError):
        build_model(ModelConfig(**kwargs))


def test_bad_input_shape():
    m = build_model(ModelConfig(base_filters=2))
    with pytest.raises(DimensionError):
        m.forward(np.zeros((2, 32, 32)))


def test_nchw_input_matches_hw():
    m = build_model(ModelConfig(base_filters=2, fc_sizes=(4,)))
    x = np.random.default_rng(0).random((2, 64, 64)).astype(np.float32)
    assert np.array_equal(m.forward(x), m.forward(x[:, None]))


def test_same_seed_same_weights():
    a = build_model(ModelConfig(base_filters=2, seed=7)).state_dict()
    b = build_model(ModelConfig(base_filters=2, seed=7)).state_dict()
    c = build_model(ModelConfig(base_filters=2, seed=8)).state_dict()
    assert all(np.array_equal(a[k], b[k]) for k in a)
    assert not all(np.array_equal(a[k], c[k]) for k in a)


def test_zero_output_layer_gives_half_and_ln2():
    m = build_model(ModelConfig(base_filters=2, fc_sizes=(4,)))
    out = next(l for l in m.layers if l.name == "out.dense")
    out.params["weight"][:] = 0
    x = np.random.default_rng(1).random((5, 64, 64))
    assert np.allclose(m.forward(x), 0.5)
    loss, _ = loss_and_backward(m, x, np.array([0, 1, 1, 0, 1]))
    assert loss == pytest.approx(math.log(2), abs=1e-6)


def test_softmax_ce_stable_for_large_logits():
    loss, grad = softmax_cross_entropy(np.array([[1000.0, -1000.0]]), np.array([1]))
    assert np.isfinite(loss) and loss == pytest.approx(2000.0)
    assert np.all(np.isfinite(grad))


def test_nonfinite_input_names_layer():
    m = build_model(ModelConfig(base_filters=2, fc_sizes=(4,)))
    x = np.zeros((2, 64, 64))
    x[0, 3, 3] = np.nan
    with pytest.raises(NumericError, match="b1s1"):
        loss_and_backward(m, x, np.array([0, 1]))


def test_bad_labels():
    m = build_model(ModelConfig(base_filters=2))
    with pytest.raises(ValueError):
        loss_and_backward(m, np.zeros((2, 64, 64)), np.array([0, 2]))


def test_dropout_keep_rate_and_scale():
    d = Dropout("d", 0.25, np.random.default_rng(0))
    x = np.ones((200, 100), np.float64)
    y = d.forward(x, True)
    keep = np.mean(y > 0)
    # binomial sd of the keep fraction is about 0.003
    assert abs(keep - 0.75) < 0.015
    assert np.allclose(y[y > 0], 1 / 0.75)
    assert np.array_equal(d.forward(x, False), x)


def test_batchnorm_inference_is_per_sample():
    bn = BatchNorm("bn", 3, dtype=np.float64)
    rng = np.random.default_rng(0)
    for _ in range(5):
        bn.forward(rng.standard_normal((8, 4, 4, 3)) * 2 + 1, True)
    x = rng.standard_normal((6, 4, 4, 3))
    whole = bn.forward(x, False)
    single = np.concatenate([bn.forward(x[i:i + 1], False) for i in range(6)])
    assert np.allclose(whole, single, atol=1e-12)


def test_running_stats_update():
    bn = BatchNorm("bn", 1, momentum=0.9, dtype=np.float64)
    x = np.arange(8, dtype=np.float64).reshape(8, 1)
    bn.forward(x, True)
    assert bn.buffers["running_mean"][0] == pytest.approx(0.1 * 3.5)
    assert bn.buffers["running_var"][0] == pytest.approx(0.9 + 0.1 * np.var(x, ddof=1))


def _unfused_infer(model, x):
    h = model._as_nhwc(x)
    for layer in model.layers:
        h = layer.forward(h, False)
    return h


def test_fused_inference_matches_unfused():
    m = build_model(ModelConfig(base_filters=4, fc_sizes=(16, 8)))
    rng = np.random.default_rng(3)
    # give batch norm non-trivial running statistics
    for _ in range(3):
        loss_and_backward(m, rng.random((8, 64, 64)), rng.integers(0, 2, 8))
    x = rng.random((4, 64, 64)).astype(np.float32)
    assert np.allclose(m.logits(x, mode="infer"), _unfused_infer(m, x), atol=1e-5, rtol=1e-5)


def test_state_dict_roundtrip_and_mismatch():
    a = build_model(ModelConfig(base_filters=2, seed=1))
    b = build_model(ModelConfig(base_filters=2, seed=2))
    b.load_state_dict(a.state_dict())
    x = np.random.default_rng(0).random((2, 64, 64))
    assert np.array_equal(a.forward(x), b.forward(x))
    state = a.state_dict()
    state.pop("out.dense.bias")
    with pytest.raises(ConfigError, match="out.dense.bias"):
        b.load_state_dict(state)
