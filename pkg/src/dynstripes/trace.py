"""Activation traces: the ``DSTA`` binary format and synthetic trace generation.

File layout, all little-endian::

    magic        4s   b"DSTA"
    version      u16
    base_width   u8
    reserved     u8
    layer_count  u32
    then per layer:
      layer_id   u32
      name_len   u16, followed by name_len bytes of UTF-8
      N, C, H, W u32 x 4
      q_width    u8
      q_frac     u8
      q_rounding u8   (0 = truncate, 1 = nearest-even)
      reserved   u8
      values     u16 x (N*C*H*W), row-major (n, c, y, x) dispatch order
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    BadMagic,
    ConfigError,
    InfeasibleSpec,
    Truncated,
    TraceFormatError,
    UnsupportedVersion,
    ValueOutOfRange,
)
from .fixedpoint import MAX_WIDTH, QuantSpec, Rounding

MAGIC = b"DSTA"
VERSION = 1

_HEADER = struct.Struct("<4sHBBI")
_LAYER_ID = struct.Struct("<IH")
_LAYER_TAIL = struct.Struct("<IIIIBBBB")
_ROUNDING_CODES = {Rounding.TRUNCATE: 0, Rounding.NEAREST_EVEN: 1}
_ROUNDING_FROM_CODE = {v: k for k, v in _ROUNDING_CODES.items()}


@dataclass(eq=False)
class TraceLayer:
    layer_id: int
    name: str
    dims: tuple[int, int, int, int]
    quant: QuantSpec
    values: np.ndarray

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        if len(self.dims) != 4 or any(d < 0 for d in self.dims):
            raise ValueError(f"dims must be four non-negative sizes, got {self.dims}")
        values = np.asarray(self.values)
        if values.size and (values.min() < 0):
            raise ValueOutOfRange(f"layer {self.name!r} has negative activations")
        self.values = values.astype(np.uint16).reshape(-1)
        if self.values.size != int(np.prod(self.dims)):
            raise ValueError(f"layer {self.name!r}: {self.values.size} values for dims {self.dims}")

    def __len__(self):
        return self.values.size

    def __eq__(self, other):
        if not isinstance(other, TraceLayer):
            return NotImplemented
        return (self.layer_id == other.layer_id and self.name == other.name
                and self.dims == other.dims and self.quant == other.quant
                and np.array_equal(self.values, other.values))


@dataclass(eq=False)
class ActivationTrace:
    base_width: int = MAX_WIDTH
    layers: list[TraceLayer] = field(default_factory=list)
    version: int = VERSION

    def __post_init__(self):
        if not 1 <= self.base_width <= MAX_WIDTH:
            raise ValueError(f"base_width must be in [1, {MAX_WIDTH}]")
        limit = 1 << self.base_width
        for layer in self.layers:
            if layer.values.size and int(layer.values.max()) >= limit:
                raise ValueOutOfRange(
                    f"layer {layer.name!r} holds a value >= 2^{self.base_width}")

    def __eq__(self, other):
        if not isinstance(other, ActivationTrace):
            return NotImplemented
        return (self.base_width == other.base_width and self.version == other.version
                and self.layers == other.layers)

    def layer(self, name: str) -> TraceLayer:
        for layer in self.layers:
            if layer.name == name:
                return layer
        raise KeyError(name)


def encode_trace(trace: ActivationTrace) -> bytes:
    limit = 1 << trace.base_width
    parts = [_HEADER.pack(MAGIC, trace.version, trace.base_width, 0, len(trace.layers))]
    for layer in trace.layers:
        if layer.values.size and int(layer.values.max()) >= limit:
            raise ValueOutOfRange(f"layer {layer.name!r} holds a value >= 2^{trace.base_width}")
        name = layer.name.encode("utf-8")
        q = layer.quant
        parts.append(_LAYER_ID.pack(layer.layer_id, len(name)))
        parts.append(name)
        parts.append(_LAYER_TAIL.pack(*layer.dims, q.width, q.frac_bits,
                                      _ROUNDING_CODES[q.rounding], 0))
        parts.append(layer.values.astype("<u2").tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise Truncated(f"file ends inside {what} (offset {self.pos}, need {n} bytes)")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, st: struct.Struct, what: str) -> tuple:
        return st.unpack(self.take(st.size, what))


def decode_trace(data: bytes) -> ActivationTrace:
    r = _Reader(data)
    if len(data) >= 4 and data[:4] != MAGIC:
        raise BadMagic(f"expected magic {MAGIC!r}, found {data[:4]!r}")
    magic, version, base_width, _, n_layers = r.unpack(_HEADER, "header")
    if version != VERSION:
        raise UnsupportedVersion(f"trace version {version} (supported: {VERSION})")
    if not 1 <= base_width <= MAX_WIDTH:
        raise TraceFormatError(f"base_width {base_width} out of range")
    limit = 1 << base_width
    layers = []
    for i in range(n_layers):
        layer_id, name_len = r.unpack(_LAYER_ID, f"layer {i} header")
        try:
            name = r.take(name_len, f"layer {i} name").decode("utf-8")
        except UnicodeDecodeError as e:
            raise TraceFormatError(f"layer {i} name is not UTF-8: {e}") from None
        n, c, h, w, q_width, q_frac, q_round, _ = r.unpack(_LAYER_TAIL, f"layer {i} header")
        if q_round not in _ROUNDING_FROM_CODE:
            raise TraceFormatError(f"layer {name!r}: unknown rounding code {q_round}")
        try:
            quant = QuantSpec(q_width, q_frac, _ROUNDING_FROM_CODE[q_round])
        except ValueError as e:
            raise TraceFormatError(f"layer {name!r}: {e}") from None
        count = n * c * h * w
        values = np.frombuffer(r.take(2 * count, f"layer {name!r} values"), dtype="<u2")
        if count and int(values.max()) >= limit:
            raise ValueOutOfRange(f"layer {name!r} holds a value >= 2^{base_width}")
        layers.append(TraceLayer(layer_id, name, (n, c, h, w), quant, values.astype(np.uint16)))
    if r.pos != len(data):
        raise TraceFormatError(f"{len(data) - r.pos} trailing bytes after last layer")
    return ActivationTrace(base_width, layers, version)


def write_trace(trace: ActivationTrace, path: str | Path) -> None:
    Path(path).write_bytes(encode_trace(trace))


def read_trace(path: str | Path) -> ActivationTrace:
    return decode_trace(Path(path).read_bytes())


def trace_checksum(trace: ActivationTrace) -> str:
    return hashlib.sha256(encode_trace(trace)).hexdigest()


# Synthetic traces with a prescribed per-subgroup span distribution.


@dataclass
class SyntheticLayer:
    name: str
    size: int
    spans: Mapping[int, float]
    zero_prob: float = 0.0


@dataclass
class SyntheticSpec:
    layers: list[SyntheticLayer]
    base_width: int = MAX_WIDTH
    subgroup_size: int = 16

    @classmethod
    def uniform(cls, span: int, sizes: Sequence[int], base_width: int = MAX_WIDTH,
                subgroup_size: int = 16) -> "SyntheticSpec":
        layers = [SyntheticLayer(f"layer{i}", n, {span: 1.0}) for i, n in enumerate(sizes)]
        return cls(layers, base_width, subgroup_size)

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        try:
            layers = []
            for i, ld in enumerate(d["layers"]):
                if "dims" in ld:
                    size = int(np.prod([int(x) for x in ld["dims"]]))
                else:
                    size = int(ld["size"])
                spans = ld["spans"]
                if isinstance(spans, (list, tuple)):
                    spans = {int(s): 1.0 for s in spans}
                else:
                    spans = {int(k): float(v) for k, v in spans.items()}
                layers.append(SyntheticLayer(ld.get("name", f"layer{i}"), size, spans,
                                             float(ld.get("zero_prob", 0.0))))
            return cls(layers, int(d.get("base_width", MAX_WIDTH)),
                       int(d.get("subgroup_size", 16)))
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError(f"malformed synthetic spec: {e}") from None

    @classmethod
    def load(cls, path: str | Path) -> "SyntheticSpec":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: not valid JSON ({e})") from None


def allocate_counts(weights: Mapping[int, float], total: int) -> dict[int, int]:
    """Split ``total`` subgroups across spans in proportion to ``weights``.

    Largest-remainder rounding, ties broken by smaller span, so the counts sum
    to ``total`` exactly.
    """
    keys = sorted(weights)
    w = np.array([weights[k] for k in keys], dtype=np.float64)
    if np.any(w < 0) or w.sum() <= 0:
        raise InfeasibleSpec("span weights must be non-negative with a positive sum")
    ideal = w / w.sum() * total
    counts = np.floor(ideal).astype(np.int64)
    short = total - int(counts.sum())
    order = sorted(range(len(keys)), key=lambda i: (-(ideal[i] - counts[i]), keys[i]))
    for i in order[:short]:
        counts[i] += 1
    return {k: int(c) for k, c in zip(keys, counts)}


def _synth_layer(spec: SyntheticLayer, base_width: int, group: int,
                 rng: np.random.Generator) -> np.ndarray:
    if spec.size % group:
        raise InfeasibleSpec(f"layer {spec.name!r}: size {spec.size} is not a multiple "
                             f"of the subgroup size {group}")
    for s in spec.spans:
        if not 1 <= s <= base_width:
            raise InfeasibleSpec(f"layer {spec.name!r}: span {s} outside [1, {base_width}]")
    if not 0.0 <= spec.zero_prob <= 1.0:
        raise InfeasibleSpec(f"layer {spec.name!r}: zero_prob must be a probability")
    n_groups = spec.size // group
    counts = allocate_counts(spec.spans, n_groups)
    spans = np.concatenate([np.full(c, s, dtype=np.int64) for s, c in counts.items()])
    spans = rng.permutation(spans)

    n_low = rng.integers(0, base_width - spans + 1)
    n_high = n_low + spans - 1
    masks = (np.int64(1) << spans) - 1
    vals = rng.integers(0, 1 << base_width, size=(n_groups, group), dtype=np.int64)
    vals = (vals & masks[:, None]) << n_low[:, None]
    if spec.zero_prob > 0:
        vals[rng.random((n_groups, group)) < spec.zero_prob] = 0
    rows = np.arange(n_groups)
    # One lane pins the top of the window, another (possibly the same) the bottom.
    vals[rows, rng.integers(0, group, n_groups)] |= np.int64(1) << n_high
    vals[rows, rng.integers(0, group, n_groups)] |= np.int64(1) << n_low
    return vals.reshape(-1).astype(np.uint16)


def gen_synthetic(spec: SyntheticSpec, seed: int = 0) -> ActivationTrace:
    if not 1 <= spec.base_width <= MAX_WIDTH:
        raise InfeasibleSpec(f"base_width {spec.base_width} outside [1, {MAX_WIDTH}]")
    if spec.subgroup_size < 1:
        raise InfeasibleSpec("subgroup_size must be positive")
    rng = np.random.default_rng(seed)
    quant = QuantSpec(spec.base_width, 0)
    layers = []
    for i, ls in enumerate(spec.layers):
        values = _synth_layer(ls, spec.base_width, spec.subgroup_size, rng)
        layers.append(TraceLayer(i, ls.name, (1, ls.size, 1, 1), quant, values))
    return ActivationTrace(spec.base_width, layers)
