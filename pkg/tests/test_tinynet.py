import numpy as np
import pytest

from dynstripes.errors import ConfigError, ShapeMismatch
from dynstripes.fixedpoint import QuantSpec, quantize_array
from dynstripes.profile import LayerPrecision
from dynstripes.tinynet import TinyNet, default_net_config, random_inputs, run_reference

from oracles import direct_conv2d


def naive_forward(net: TinyNet, x: np.ndarray) -> np.ndarray:
    for layer in net.layers:
        if layer.type == "conv2d":
            x = direct_conv2d(x, layer.weights, layer.bias, layer.params["stride"], layer.params["padding"])
        elif layer.type == "relu":
            x = np.where(x > 0, x, 0.0)
        elif layer.type == "maxpool":
            s = layer.params["size"]
            n, c, h, w = x.shape
            out = np.full((n, c, h // s, w // s), -np.inf)
            for i in range(n):
                for ch in range(c):
                    for y in range(h // s):
                        for xx in range(w // s):
                            for dy in range(s):
                                for dx in range(s):
                                    out[i, ch, y, xx] = max(out[i, ch, y, xx], x[i, ch, y * s + dy, xx * s + dx])
            x = out
        else:
            flat = x.reshape(x.shape[0], -1)
            out = np.zeros((flat.shape[0], layer.weights.shape[0]))
            for i in range(flat.shape[0]):
                for o in range(layer.weights.shape[0]):
                    out[i, o] = layer.bias[o] + sum(flat[i, j] * layer.weights[o, j] for j in range(flat.shape[1]))
            x = out
    return x.reshape(x.shape[0], -1)


def small_net(seed, stride=1):
    return TinyNet.from_dict({
        "input": [2, 6, 6], "seed": seed,
        "layers": [
            {"type": "conv2d", "name": "c1", "out_channels": 3, "kernel": 3, "stride": stride},
            {"type": "relu", "name": "a1"},
            {"type": "maxpool", "name": "p1", "size": 2},
            {"type": "conv2d", "name": "c2", "out_channels": 2, "kernel": 1, "padding": 0},
            {"type": "relu", "name": "a2"},
            {"type": "fc", "name": "f", "out_features": 4},
        ],
    })


@pytest.mark.parametrize("seed, stride", [(0, 1), (1, 1), (2, 2), (3, 1)])
def test_real_arithmetic_matches_direct_oracle(seed, stride):
    net = small_net(seed, stride)
    x = random_inputs(net, 3, seed=seed)
    _, logits = run_reference(net, x, quantize=False)
    expected = naive_forward(net, x)
    np.testing.assert_allclose(logits, expected, rtol=1e-6, atol=1e-12)


def test_default_net_real_arithmetic():
    net = TinyNet.from_dict(default_net_config(4))
    x = random_inputs(net, 1, seed=1)
    _, logits = run_reference(net, x, quantize=False)
    np.testing.assert_allclose(logits, naive_forward(net, x), rtol=1e-6)


def test_zero_input_zero_bias_gives_zero_trace():
    cfg = default_net_config(0)
    for layer in cfg["layers"]:
        if layer["type"] in ("conv2d", "fc"):
            layer["bias"] = 0
    net = TinyNet.from_dict(cfg)
    trace, logits = run_reference(net, np.zeros((2, 3, 16, 16)))
    assert all(not layer.values.any() for layer in trace.layers)
    assert not logits.any()


def identity_net(quant):
    return TinyNet.from_dict({
        "input": [1, 4, 4],
        "layers": [
            {"type": "conv2d", "name": "id", "out_channels": 1, "kernel": 1, "padding": 0,
             "weights": [[[[1.0]]]], "bias": 0},
            {"type": "relu", "name": "act", "quant": quant},
        ],
    })


def test_identity_conv_trace_equals_quantized_input():
    net = identity_net({"width": 8, "frac_bits": 4})
    x = np.random.default_rng(0).random((2, 1, 4, 4)) * 10
    trace, _ = run_reference(net, x)
    layer = trace.layers[0]
    assert layer.dims == (2, 1, 4, 4)
    assert np.array_equal(layer.values, quantize_array(x, QuantSpec(8, 4)).reshape(-1))


def test_trace_dispatch_order_is_row_major():
    net = identity_net({"width": 16, "frac_bits": 0})
    x = np.arange(32, dtype=float).reshape(2, 1, 4, 4)
    trace, _ = run_reference(net, x)
    assert trace.layers[0].values.tolist() == list(range(32))


def test_windows_and_budgets_reduce_activations():
    net = identity_net({"width": 8, "frac_bits": 0})
    x = np.full((1, 1, 4, 4), float(0b1011))
    t, out = run_reference(net, x, windows={"act": LayerPrecision(3, 1)})
    assert set(t.layers[0].values.tolist()) == {0b1010}
    assert np.all(out == 0b1010)
    t, out = run_reference(net, x, budgets={"act": 1})
    assert set(t.layers[0].values.tolist()) == {0b1000}


def test_shape_mismatch():
    net = small_net(0)
    with pytest.raises(ShapeMismatch):
        run_reference(net, np.zeros((1, 3, 6, 6)))


@pytest.mark.parametrize("cfg", [
    {"layers": [{"type": "relu"}]},
    {"input": [1, 4, 4], "layers": []},
    {"input": [1, 4, 4], "layers": [{"type": "softmax"}]},
    {"input": [1, 4, 4], "layers": [{"type": "relu", "name": "x"}, {"type": "relu", "name": "x"}]},
    {"input": [1, 4, 4], "layers": [{"type": "conv2d", "out_channels": 1, "kernel": 9, "padding": 0}]},
    {"input": [1, 4, 4], "layers": [{"type": "conv2d", "out_channels": 1, "kernel": 1, "weights": [1, 2]}]},
    {"input": [1, 4, 4], "layers": [{"type": "fc", "out_features": 2}, {"type": "maxpool"}]},
])
def test_bad_configs(cfg):
    with pytest.raises(ConfigError):
        TinyNet.from_dict(cfg)


def test_to_dict_round_trip():
    net = TinyNet.from_dict(default_net_config(7))
    again = TinyNet.from_dict(net.to_dict())
    x = random_inputs(net, 2, seed=3)
    t1, l1 = run_reference(net, x)
    t2, l2 = run_reference(again, x)
    assert t1 == t2 and np.array_equal(l1, l2)


def test_default_net_scale():
    net = TinyNet.from_dict(default_net_config())
    compute = [l for l in net.layers if l.type in ("conv2d", "fc")]
    assert len(compute) <= 4
    assert all(l.weights.shape[0] <= 8 for l in compute if l.type == "conv2d")
    assert net.input_shape[1:] == (16, 16)
