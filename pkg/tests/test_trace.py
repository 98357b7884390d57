import json
import struct
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dynstripes.errors import BadMagic, InfeasibleSpec, Truncated, TraceFormatError, UnsupportedVersion, ValueOutOfRange
from dynstripes.fixedpoint import QuantSpec
from dynstripes.precdetect import detect_batch
from dynstripes.tinynet import TinyNet, random_inputs, run_reference
from dynstripes.trace import (
    ActivationTrace,
    SyntheticLayer,
    SyntheticSpec,
    TraceLayer,
    allocate_counts,
    decode_trace,
    encode_trace,
    gen_synthetic,
    read_trace,
    trace_checksum,
    write_trace,
)

from oracles import scan_precision_batch

FIXTURES = Path(__file__).parent / "fixtures"
CHECKSUMS = {
    "tinynet_seed0.dsta": "182d662c3b9c612571a7e49fd929084e958cf671cada765c151fec0fb2b55262",
    "synthetic_mixed.dsta": "06b6bb05cb4fd4de3c011df89cf23c07095df2c198a1b6eba1ed2b37aab908d8",
    "narrow8.dsta": "6c77583952c27f701158f54685dfc6164ddff15f1d150c70418000e43eba6ecd",
    "edge_cases.dsta": "2d85db5291c6059d5eaafedd6276ae471060964e394893666cec6202641d1d1a",
}


@pytest.mark.parametrize("name", sorted(CHECKSUMS))
def test_fixture_round_trip(name, tmp_path):
    data = (FIXTURES / name).read_bytes()
    trace = decode_trace(data)
    assert encode_trace(trace) == data
    assert trace_checksum(trace) == CHECKSUMS[name]
    write_trace(trace, tmp_path / name)
    assert read_trace(tmp_path / name) == trace


def test_golden_tinynet_trace():
    net = TinyNet.load(FIXTURES / "tinynet.json")
    trace, _ = run_reference(net, random_inputs(net, 4, seed=0))
    assert trace_checksum(trace) == CHECKSUMS["tinynet_seed0.dsta"]


def test_golden_synthetic_trace():
    spec = SyntheticSpec.from_dict(json.loads((FIXTURES / "synthetic_mixed.json").read_text()))
    assert trace_checksum(gen_synthetic(spec, seed=42)) == CHECKSUMS["synthetic_mixed.dsta"]


def test_edge_fixture_contents():
    t = read_trace(FIXTURES / "edge_cases.dsta")
    assert t.layers[0].dims == (0, 4, 2, 2) and len(t.layers[0]) == 0
    assert t.layers[1].name == "unicode-λ" and t.layers[1].layer_id == 7
    assert t.layers[1].quant == QuantSpec(12, 3, "nearest-even")
    assert t.layers[1].values.tolist() == [0, 1, 4095]


def small_trace():
    return ActivationTrace(8, [TraceLayer(0, "a", (1, 2, 1, 2), QuantSpec(8, 4), [1, 2, 3, 255])])


def test_bad_magic():
    data = bytearray(encode_trace(small_trace()))
    data[0:4] = b"XSTA"
    with pytest.raises(BadMagic):
        decode_trace(bytes(data))


def test_unsupported_version():
    data = bytearray(encode_trace(small_trace()))
    data[4:6] = struct.pack("<H", 9)
    with pytest.raises(UnsupportedVersion):
        decode_trace(bytes(data))


def test_truncated_everywhere():
    data = encode_trace(small_trace())
    for cut in range(len(data)):
        with pytest.raises((Truncated, BadMagic)):
            decode_trace(data[:cut])


def test_value_out_of_range_in_file():
    data = bytearray(encode_trace(small_trace()))
    data[-2:] = struct.pack("<H", 256)
    with pytest.raises(ValueOutOfRange):
        decode_trace(bytes(data))


def test_value_out_of_range_on_construction():
    with pytest.raises(ValueOutOfRange):
        ActivationTrace(8, [TraceLayer(0, "a", (1, 1, 1, 1), QuantSpec(8, 0), [300])])


def test_trailing_bytes_rejected():
    with pytest.raises(TraceFormatError):
        decode_trace(encode_trace(small_trace()) + b"\0")


def test_layer_dims_must_match():
    with pytest.raises(ValueError):
        TraceLayer(0, "a", (1, 2, 2, 2), QuantSpec(), [1, 2, 3])


@st.composite
def traces(draw):
    bw = draw(st.integers(1, 16))
    layers = []
    for i in range(draw(st.integers(0, 3))):
        dims = tuple(draw(st.integers(0, 2)) for _ in range(4))
        n = int(np.prod(dims))
        vals = draw(st.lists(st.integers(0, (1 << bw) - 1), min_size=n, max_size=n))
        w = draw(st.integers(1, 16))
        q = QuantSpec(w, draw(st.integers(0, w)), draw(st.sampled_from(["truncate", "nearest-even"])))
        layers.append(TraceLayer(draw(st.integers(0, 2**32 - 1)), draw(st.text(max_size=8)), dims, q, vals))
    return ActivationTrace(bw, layers)


@settings(max_examples=150)
@given(traces())
def test_round_trip_property(trace):
    assert decode_trace(encode_trace(trace)) == trace


@pytest.mark.parametrize("span", [1, 2, 4, 8, 16])
def test_synthetic_uniform_spans_exact(span):
    trace = gen_synthetic(SyntheticSpec.uniform(span, [2048, 512]), seed=span)
    for layer in trace.layers:
        hi, lo, zero = scan_precision_batch(layer.values.reshape(-1, 16))
        assert not zero.any()
        assert np.all(hi - lo + 1 == span)


def test_synthetic_distribution_exact():
    spec = SyntheticSpec([SyntheticLayer("a", 16 * 100, {2: 1, 5: 1, 9: 2}, zero_prob=0.5)])
    trace = gen_synthetic(spec, seed=9)
    spans = detect_batch(trace.layers[0].values.reshape(-1, 16)).spans()
    counts = dict(zip(*np.unique(spans, return_counts=True)))
    assert counts == {2: 25, 5: 25, 9: 50}


def test_synthetic_subgroup_size_option():
    spec = SyntheticSpec([SyntheticLayer("a", 256, {6: 1})], subgroup_size=256)
    trace = gen_synthetic(spec, seed=0)
    assert detect_batch(trace.layers[0].values.reshape(1, 256)).spans().tolist() == [6]


def test_synthetic_deterministic():
    spec = SyntheticSpec.uniform(5, [512])
    assert gen_synthetic(spec, 1) == gen_synthetic(spec, 1)
    assert gen_synthetic(spec, 1) != gen_synthetic(spec, 2)


@pytest.mark.parametrize("spec", [
    SyntheticSpec.uniform(17, [256]),
    SyntheticSpec.uniform(0, [256]),
    SyntheticSpec.uniform(9, [256], base_width=8),
    SyntheticSpec.uniform(4, [100]),
    SyntheticSpec([SyntheticLayer("a", 256, {4: 0})]),
])
def test_synthetic_infeasible(spec):
    with pytest.raises(InfeasibleSpec):
        gen_synthetic(spec)


@given(st.dictionaries(st.integers(1, 16), st.floats(0.01, 10), min_size=1), st.integers(0, 1000))
def test_allocate_counts_sums(weights, total):
    counts = allocate_counts(weights, total)
    assert sum(counts.values()) == total
    tot_w = sum(weights.values())
    for k, c in counts.items():
        assert abs(c - weights[k] / tot_w * total) < 1
