"""A tiny fixed-point CNN executor that produces realistic activation traces.

Networks are ordered lists of ``conv2d``, ``relu``, ``maxpool`` and ``fc``
layers described in JSON. Each ``relu`` carries the :class:`QuantSpec` of its
output; those quantized activations are what the trace records and what the
next layer consumes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, ShapeMismatch
from .fixedpoint import QuantSpec, dequantize_array, msp2_truncate_array, quantize_array, reduce_precision_array
from .profile import LayerPrecision
from .trace import ActivationTrace, TraceLayer

LAYER_TYPES = ("conv2d", "relu", "maxpool", "fc")


@dataclass
class Layer:
    type: str
    name: str
    params: dict = field(default_factory=dict)
    weights: Optional[np.ndarray] = None
    bias: Optional[np.ndarray] = None
    quant: Optional[QuantSpec] = None


@dataclass
class TinyNet:
    input_shape: tuple[int, int, int]
    layers: list[Layer]
    name: str = "tinynet"

    @property
    def act_layers(self) -> list[str]:
        """Names of the layers whose outputs are recorded in traces."""
        return [l.name for l in self.layers if l.type == "relu"]

    def act_quant(self, name: str) -> QuantSpec:
        for l in self.layers:
            if l.name == name and l.type == "relu":
                return l.quant
        raise KeyError(name)

    @classmethod
    def from_dict(cls, d: Mapping) -> "TinyNet":
        try:
            c, h, w = (int(x) for x in d["input"])
        except (KeyError, TypeError, ValueError):
            raise ConfigError("net config needs 'input': [channels, height, width]") from None
        rng = np.random.default_rng(int(d.get("seed", 0)))
        shape: tuple[int, ...] = (c, h, w)
        layers = []
        names = set()
        for i, ld in enumerate(d.get("layers", [])):
            kind = ld.get("type")
            if kind not in LAYER_TYPES:
                raise ConfigError(f"layer {i}: unknown type {kind!r}")
            name = ld.get("name", f"{kind}{i}")
            if name in names:
                raise ConfigError(f"duplicate layer name {name!r}")
            names.add(name)
            try:
                layer, shape = _build_layer(kind, name, ld, shape, rng)
            except (KeyError, TypeError, ValueError) as e:
                if isinstance(e, ConfigError):
                    raise
                raise ConfigError(f"layer {name!r}: bad parameter {e}") from None
            layers.append(layer)
        if not layers:
            raise ConfigError("net config has no layers")
        return cls((c, h, w), layers, d.get("name", "tinynet"))

    @classmethod
    def load(cls, path: str | Path) -> "TinyNet":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: not valid JSON ({e})") from None
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        """Config with every weight inlined; reloading it reproduces the net exactly."""
        out = []
        for l in self.layers:
            d = {"type": l.type, "name": l.name, **l.params}
            if l.weights is not None:
                d["weights"] = l.weights.tolist()
                d["bias"] = l.bias.tolist()
            if l.quant is not None:
                d["quant"] = l.quant.to_dict()
            out.append(d)
        return {"name": self.name, "input": list(self.input_shape), "layers": out}


def _param_array(ld: Mapping, key: str, shape: tuple[int, ...], default: np.ndarray) -> np.ndarray:
    if key not in ld:
        return default
    arr = np.asarray(ld[key], dtype=np.float64)
    if arr.ndim == 0:
        return np.full(shape, float(arr))
    if arr.shape != shape:
        raise ConfigError(f"{key} has shape {arr.shape}, expected {shape}")
    return arr


def _build_layer(kind: str, name: str, ld: Mapping, shape: tuple[int, ...],
                 rng: np.random.Generator) -> tuple[Layer, tuple[int, ...]]:
    if kind == "conv2d":
        if len(shape) != 3:
            raise ConfigError(f"{name}: conv2d after a flattening layer")
        c, h, w = shape
        oc = int(ld["out_channels"])
        k = int(ld.get("kernel", 3))
        stride = int(ld.get("stride", 1))
        pad = int(ld.get("padding", k // 2))
        oh = (h + 2 * pad - k) // stride + 1
        ow = (w + 2 * pad - k) // stride + 1
        if oh < 1 or ow < 1:
            raise ConfigError(f"{name}: kernel {k} does not fit input {h}x{w}")
        wshape = (oc, c, k, k)
        std = np.sqrt(2.0 / (c * k * k))
        weights = _param_array(ld, "weights", wshape, rng.normal(0.0, std, wshape))
        bias = _param_array(ld, "bias", (oc,), rng.normal(0.0, 0.1, oc))
        params = {"out_channels": oc, "kernel": k, "stride": stride, "padding": pad}
        return Layer(kind, name, params, weights, bias), (oc, oh, ow)
    if kind == "fc":
        fan_in = int(np.prod(shape))
        out = int(ld["out_features"])
        wshape = (out, fan_in)
        weights = _param_array(ld, "weights", wshape,
                               rng.normal(0.0, np.sqrt(2.0 / fan_in), wshape))
        bias = _param_array(ld, "bias", (out,), rng.normal(0.0, 0.1, out))
        return Layer(kind, name, {"out_features": out}, weights, bias), (out,)
    if kind == "maxpool":
        if len(shape) != 3:
            raise ConfigError(f"{name}: maxpool after a flattening layer")
        size = int(ld.get("size", 2))
        c, h, w = shape
        if size < 1 or h < size or w < size:
            raise ConfigError(f"{name}: pool size {size} does not fit {h}x{w}")
        return Layer(kind, name, {"size": size}), (c, h // size, w // size)
    quant = QuantSpec.from_dict(ld.get("quant", {}))
    return Layer(kind, name, quant=quant), shape


def conv2d(x: np.ndarray, weights: np.ndarray, bias: np.ndarray, stride: int, pad: int) -> np.ndarray:
    k = weights.shape[-1]
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    return np.einsum("ncyxij,ocij->noyx", win, weights, optimize=True) + bias[None, :, None, None]


def maxpool(x: np.ndarray, size: int) -> np.ndarray:
    n, c, h, w = x.shape
    h2, w2 = h // size, w // size
    x = x[:, :, :h2 * size, :w2 * size].reshape(n, c, h2, size, w2, size)
    return x.max(axis=(3, 5))


def run_reference(net: TinyNet, inputs: np.ndarray, *, quantize: bool = True,
                  windows: Optional[Mapping[str, LayerPrecision]] = None,
                  budgets: Optional[Mapping[str, int]] = None) -> tuple[ActivationTrace, np.ndarray]:
    """Run ``net`` on a batch and record every ReLU output.

    ``windows`` and ``budgets`` restrict the named layers' activations to a
    precision window or an MSP2 budget before they feed the next layer. With
    ``quantize=False`` the forward pass stays in real arithmetic; the trace
    still records the quantized view of each activation.
    """
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim == 3:
        x = x[None]
    if x.shape[1:] != tuple(net.input_shape):
        raise ShapeMismatch(f"input shape {x.shape[1:]} does not match net input {net.input_shape}")
    windows = windows or {}
    budgets = budgets or {}
    recorded = []
    for layer in net.layers:
        if layer.type == "conv2d":
            x = conv2d(x, layer.weights, layer.bias, layer.params["stride"], layer.params["padding"])
        elif layer.type == "fc":
            x = x.reshape(x.shape[0], -1) @ layer.weights.T + layer.bias
        elif layer.type == "maxpool":
            x = maxpool(x, layer.params["size"])
        else:
            x = np.maximum(x, 0.0)
            raw = quantize_array(x, layer.quant)
            if layer.name in windows:
                w = windows[layer.name]
                raw = reduce_precision_array(raw, w.n_high, w.n_low)
            if layer.name in budgets:
                raw = msp2_truncate_array(raw, budgets[layer.name])
            dims = x.shape if x.ndim == 4 else (x.shape[0], x.shape[1], 1, 1)
            recorded.append(TraceLayer(len(recorded), layer.name, dims, layer.quant, raw))
            if quantize:
                x = dequantize_array(raw, layer.quant).reshape(x.shape)
    base_width = max((l.quant.width for l in recorded), default=16)
    return ActivationTrace(base_width, recorded), x.reshape(x.shape[0], -1)


def random_inputs(net: TinyNet, count: int, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.random((count, *net.input_shape))


def default_net_config(seed: int = 0) -> dict:
    return {
        "name": "tinynet",
        "input": [3, 16, 16],
        "seed": seed,
        "layers": [
            {"type": "conv2d", "name": "conv1", "out_channels": 8, "kernel": 3},
            {"type": "relu", "name": "act1", "quant": {"width": 16, "frac_bits": 8}},
            {"type": "maxpool", "name": "pool1", "size": 2},
            {"type": "conv2d", "name": "conv2", "out_channels": 8, "kernel": 3},
            {"type": "relu", "name": "act2", "quant": {"width": 16, "frac_bits": 8}},
            {"type": "maxpool", "name": "pool2", "size": 2},
            {"type": "fc", "name": "fc1", "out_features": 32},
            {"type": "relu", "name": "act3", "quant": {"width": 16, "frac_bits": 8}},
            {"type": "fc", "name": "fc2", "out_features": 10},
        ],
    }
