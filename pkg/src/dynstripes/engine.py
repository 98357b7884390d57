"""Cycle models for bit-parallel, per-layer Stripes, Dynamic Stripes and
essential-bit engines, plus a functional model of the modified SIP.

A layer's activations are dispatched in trace order, cut into pallets of
``pallet_size`` activations (the last one zero-padded) and each pallet into
subgroups of ``subgroup_size`` lanes. A pallet advances only when every
subgroup is done, so its cost is the maximum subgroup cost.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import ConfigError, MissingProfile, WidthMismatch
from .fixedpoint import MAX_WIDTH, MSB_LUT, msp2_truncate_array, popcount_array, reduce_precision_array
from .precdetect import Offset, detect_batch, detect_precision, offset_schedule
from .profile import LayerPrecision, PrecisionProfile
from .trace import ActivationTrace, TraceLayer

log = logging.getLogger(__name__)


class EngineKind(str, Enum):
    BIT_PARALLEL = "bitparallel"
    STRIPES = "stripes"
    DYNAMIC = "dynamic"
    ESSENTIAL = "essential"


@dataclass(frozen=True)
class ArchConfig:
    kind: EngineKind = EngineKind.DYNAMIC
    tiles: int = 16
    filters_per_tile: int = 16
    weights_per_filter: int = 16
    pallet_size: int = 256
    subgroup_size: int = 16
    base_width: int = MAX_WIDTH
    shifter_reach: Optional[int] = None  # None = full-range shifters
    msp2_budget_source: str = "none"  # "none" or "profile"

    def __post_init__(self):
        object.__setattr__(self, "kind", EngineKind(self.kind))
        for name in ("tiles", "filters_per_tile", "weights_per_filter", "pallet_size", "subgroup_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.pallet_size % self.subgroup_size:
            raise ConfigError(f"subgroup_size {self.subgroup_size} does not divide "
                              f"pallet_size {self.pallet_size}")
        if not 1 <= self.base_width <= MAX_WIDTH:
            raise ConfigError(f"base_width must be in [1, {MAX_WIDTH}]")
        if self.shifter_reach is not None and self.shifter_reach < 0:
            raise ConfigError("shifter_reach must be non-negative")
        if self.msp2_budget_source not in ("none", "profile"):
            raise ConfigError(f"unknown msp2_budget_source {self.msp2_budget_source!r}")

    @property
    def subgroups_per_pallet(self) -> int:
        return self.pallet_size // self.subgroup_size

    @property
    def label(self) -> str:
        if self.kind is EngineKind.ESSENTIAL and self.shifter_reach is not None:
            return f"{self.kind.value}-r{self.shifter_reach}"
        return self.kind.value


@dataclass
class Pallet:
    values: np.ndarray
    layer_id: int = 0
    index: int = 0
    padding: int = 0


@dataclass
class CycleResult:
    cycles: int
    subgroup_cycles: tuple[int, ...] = ()


def make_pallets(values: np.ndarray, pallet_size: int) -> np.ndarray:
    """Reshape a flat activation stream into ``(n_pallets, pallet_size)``, zero-padded."""
    values = np.asarray(values, dtype=np.uint16).reshape(-1)
    n = -(-values.size // pallet_size)
    out = np.zeros(n * pallet_size, dtype=np.uint16)
    out[:values.size] = values
    return out.reshape(n, pallet_size)


def iter_pallets(layer: TraceLayer, pallet_size: int) -> Iterable[Pallet]:
    rows = make_pallets(layer.values, pallet_size)
    pad = rows.size - layer.values.size
    for i, row in enumerate(rows):
        yield Pallet(row, layer.layer_id, i, pad if i == len(rows) - 1 else 0)


# Per-subgroup cost kernels. ``groups`` has shape (..., subgroup_size).


def dynamic_subgroup_cycles(groups: np.ndarray) -> np.ndarray:
    return detect_batch(groups).spans()


def essential_subgroup_cycles(groups: np.ndarray, reach: Optional[int] = None) -> np.ndarray:
    """Essential-bit cost of each subgroup.

    With full-range shifters every lane retires one set bit per cycle, so the
    cost is the largest popcount. With a ``reach``-bit shifter all lanes share
    a column offset ``c`` (the highest unconsumed set bit in the subgroup) and a
    lane may only retire its top unconsumed bit when it lies within
    ``[c - (2**reach - 1), c]``.
    """
    groups = np.asarray(groups, dtype=np.int64)
    if reach is None:
        return np.maximum(popcount_array(groups).max(axis=-1, initial=0), 1)
    window = (1 << reach) - 1
    rem = groups.copy()
    cycles = np.zeros(groups.shape[:-1], dtype=np.int64)
    while True:
        ors = np.bitwise_or.reduce(rem, axis=-1)
        active = ors != 0
        if not active.any():
            break
        column = MSB_LUT[ors].astype(np.int64)
        top = MSB_LUT[rem].astype(np.int64)
        take = (rem != 0) & (top >= column[..., None] - window)
        rem = np.where(take, rem ^ (np.int64(1) << np.maximum(top, 0)), rem)
        cycles += active
    return np.maximum(cycles, 1)


def _as_pallet_values(p: Pallet | np.ndarray, cfg: ArchConfig) -> np.ndarray:
    values = np.asarray(p.values if isinstance(p, Pallet) else p)
    if values.size != cfg.pallet_size:
        raise ValueError(f"pallet holds {values.size} values, expected {cfg.pallet_size}")
    return values.reshape(cfg.subgroups_per_pallet, cfg.subgroup_size)


def pallet_cycles_bitparallel(p: Pallet, cfg: ArchConfig) -> CycleResult:
    return CycleResult(cfg.base_width, (cfg.base_width,) * cfg.subgroups_per_pallet)


def pallet_cycles_stripes(p: Pallet, layer_precision: LayerPrecision | tuple[int, int],
                          cfg: Optional[ArchConfig] = None) -> CycleResult:
    if not isinstance(layer_precision, LayerPrecision):
        layer_precision = LayerPrecision(*layer_precision)
    span = layer_precision.span
    n_sub = cfg.subgroups_per_pallet if cfg is not None else 1
    return CycleResult(span, (span,) * n_sub)


def pallet_cycles_dynamic(p: Pallet, cfg: ArchConfig) -> CycleResult:
    spans = dynamic_subgroup_cycles(_as_pallet_values(p, cfg))
    return CycleResult(int(spans.max()), tuple(int(s) for s in spans))


def pallet_cycles_essential(p: Pallet, cfg: ArchConfig,
                            msp2_budget: Optional[int] = None) -> CycleResult:
    groups = _as_pallet_values(p, cfg)
    if msp2_budget is not None:
        groups = msp2_truncate_array(groups, msp2_budget)
    costs = essential_subgroup_cycles(groups, cfg.shifter_reach)
    return CycleResult(int(costs.max()), tuple(int(c) for c in costs))


# Functional model of the modified serial inner-product unit.


@dataclass
class SipState:
    weights: tuple[int, ...]
    accumulator: int = 0

    def step(self, bit_plane: Sequence[int], offset: int) -> None:
        """One cycle: adder tree over the gated weights, then the output shifter."""
        tree = sum(w for b, w in zip(bit_plane, self.weights) if b)
        self.accumulator += tree << offset


def sip_reference(activations: Sequence[int], weights: Sequence[int],
                  schedule: Optional[Sequence[Offset | tuple[int, bool]]] = None) -> int:
    acts = [int(a) for a in activations]
    if len(acts) != len(weights):
        raise ValueError("activations and weights must have the same length")
    if schedule is None:
        schedule = offset_schedule(detect_precision(acts, MAX_WIDTH))
    sip = SipState(tuple(int(w) for w in weights))
    for offset, eog in schedule:
        sip.step([a >> offset & 1 for a in acts], offset)
        if eog:
            break
    return sip.accumulator


# Layer and trace simulation.


@dataclass
class LayerReport:
    layer_id: int
    name: str
    engine: str
    cycles: int
    pallets: int
    activations: int
    padding: int
    histogram: dict[int, int] = field(default_factory=dict)
    pallet_cycles: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    def to_dict(self) -> dict:
        return {
            "layer_id": self.layer_id,
            "name": self.name,
            "engine": self.engine,
            "cycles": self.cycles,
            "pallets": self.pallets,
            "activations": self.activations,
            "padding": self.padding,
            "subgroup_histogram": {str(k): v for k, v in sorted(self.histogram.items())},
        }


def _layer_inputs(layer: TraceLayer, cfg: ArchConfig,
                  profile: Optional[PrecisionProfile]) -> tuple[np.ndarray, Optional[LayerPrecision]]:
    values = layer.values
    if values.size and int(values.max()) >= (1 << cfg.base_width):
        raise WidthMismatch(f"layer {layer.name!r} has values wider than {cfg.base_width} bits")
    window = None
    if profile is not None:
        window = profile.window(layer.name)
        # Per-layer precision is applied first; runtime detection works on what remains.
        values = reduce_precision_array(values, window.n_high, window.n_low)
    elif cfg.kind is EngineKind.STRIPES:
        raise MissingProfile(f"Stripes engine needs a precision profile (layer {layer.name!r})")
    return values, window


def subgroup_costs(pallets: np.ndarray, cfg: ArchConfig,
                   window: Optional[LayerPrecision] = None,
                   msp2_budget: Optional[int] = None) -> np.ndarray:
    """Cost of every subgroup, shape ``(n_pallets, subgroups_per_pallet)``."""
    groups = pallets.reshape(pallets.shape[0], cfg.subgroups_per_pallet, cfg.subgroup_size)
    shape = groups.shape[:2]
    if cfg.kind is EngineKind.BIT_PARALLEL:
        return np.full(shape, cfg.base_width, dtype=np.int64)
    if cfg.kind is EngineKind.STRIPES:
        return np.full(shape, window.span, dtype=np.int64)
    if cfg.kind is EngineKind.DYNAMIC:
        return dynamic_subgroup_cycles(groups)
    if msp2_budget is not None:
        groups = msp2_truncate_array(groups, msp2_budget)
    return essential_subgroup_cycles(groups, cfg.shifter_reach)


def simulate_layer(layer: TraceLayer, cfg: ArchConfig,
                   profile: Optional[PrecisionProfile] = None,
                   msp2_profile: Optional[PrecisionProfile] = None) -> LayerReport:
    values, window = _layer_inputs(layer, cfg, profile)
    budget = None
    if cfg.kind is EngineKind.ESSENTIAL and cfg.msp2_budget_source == "profile":
        if msp2_profile is None:
            raise MissingProfile(f"essential engine configured for MSP2 budgets but no MSP2 "
                                 f"profile given (layer {layer.name!r})")
        budget = msp2_profile.budget(layer.name)
    pallets = make_pallets(values, cfg.pallet_size)
    costs = subgroup_costs(pallets, cfg, window, budget)
    per_pallet = costs.max(axis=1) if costs.size else np.zeros(0, dtype=np.int64)
    uniq, counts = np.unique(costs, return_counts=True)
    hist = {int(u): int(c) for u, c in zip(uniq, counts)}
    return LayerReport(layer.layer_id, layer.name, cfg.label, int(per_pallet.sum()),
                       int(pallets.shape[0]), int(layer.values.size),
                       int(pallets.size - layer.values.size), hist, per_pallet)


def simulate_trace(trace: ActivationTrace, cfg: ArchConfig,
                   profile: Optional[PrecisionProfile] = None,
                   msp2_profile: Optional[PrecisionProfile] = None) -> list[LayerReport]:
    if cfg.base_width < trace.base_width:
        log.warning("engine base width %d below trace base width %d", cfg.base_width, trace.base_width)
    return [simulate_layer(layer, cfg, profile, msp2_profile) for layer in trace.layers]


def envelope_profile(trace: ActivationTrace) -> PrecisionProfile:
    """Tightest per-layer window holding every activation of the trace."""
    prof = PrecisionProfile("fixed")
    for layer in trace.layers:
        p = detect_batch(layer.values.reshape(1, -1)) if layer.values.size else None
        if p is None or bool(p.is_zero[0]):
            prof.windows[layer.name] = LayerPrecision(0, 0)
        else:
            prof.windows[layer.name] = LayerPrecision(int(p.n_high[0]), int(p.n_low[0]))
    return prof


# Speedups.


def total_cycles(reports: LayerReport | Iterable[LayerReport]) -> int:
    if isinstance(reports, LayerReport):
        return reports.cycles
    return sum(r.cycles for r in reports)


def speedup(candidate: LayerReport | Iterable[LayerReport],
            baseline: LayerReport | Iterable[LayerReport]) -> Fraction:
    """Baseline cycles over candidate cycles, kept exact."""
    a, b = total_cycles(candidate), total_cycles(baseline)
    if a == 0:
        if b == 0:
            return Fraction(1)
        raise ZeroDivisionError("candidate ran in zero cycles")
    return Fraction(b, a)


def geomean(ratios: Iterable[float]) -> float:
    vals = [float(r) for r in ratios]
    if not vals:
        raise ValueError("geometric mean of an empty sequence")
    if any(v <= 0 for v in vals):
        raise ValueError("geometric mean needs positive ratios")
    return math.exp(math.fsum(math.log(v) for v in vals) / len(vals))
