"""Unsigned fixed-point activations and the bit-level queries the engines need.

Scalar helpers operate on :class:`FixedValue`; the ``*_array`` variants work on
integer numpy arrays of raw magnitudes and are what the cycle models use.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from .errors import NegativeInput

MAX_WIDTH = 16


class Rounding(str, Enum):
    TRUNCATE = "truncate"
    NEAREST_EVEN = "nearest-even"


def _check_width(width: int) -> None:
    if not 1 <= width <= MAX_WIDTH:
        raise ValueError(f"width must be in [1, {MAX_WIDTH}], got {width}")


@dataclass(frozen=True)
class FixedValue:
    raw: int
    width: int = MAX_WIDTH

    def __post_init__(self):
        _check_width(self.width)
        if not 0 <= self.raw < (1 << self.width):
            raise ValueError(f"raw {self.raw} does not fit in {self.width} bits")

    def __int__(self):
        return self.raw


@dataclass(frozen=True)
class QuantSpec:
    width: int = MAX_WIDTH
    frac_bits: int = 0
    rounding: Rounding = Rounding.TRUNCATE

    def __post_init__(self):
        _check_width(self.width)
        if not 0 <= self.frac_bits <= self.width:
            raise ValueError(f"frac_bits must be in [0, {self.width}], got {self.frac_bits}")
        object.__setattr__(self, "rounding", Rounding(self.rounding))

    @property
    def max_raw(self) -> int:
        return (1 << self.width) - 1

    @property
    def scale(self) -> float:
        return float(1 << self.frac_bits)

    def to_dict(self) -> dict:
        return {"width": self.width, "frac_bits": self.frac_bits, "rounding": self.rounding.value}

    @classmethod
    def from_dict(cls, d: dict) -> "QuantSpec":
        return cls(int(d.get("width", MAX_WIDTH)), int(d.get("frac_bits", 0)),
                   Rounding(d.get("rounding", Rounding.TRUNCATE.value)))


def quantize(x: float, spec: QuantSpec) -> FixedValue:
    """Quantize a non-negative real, saturating at ``2**width - 1``."""
    if x < 0 or math.isnan(x):
        raise NegativeInput(f"cannot quantize negative value {x}")
    scaled = x * spec.scale
    if spec.rounding is Rounding.TRUNCATE:
        raw = math.floor(scaled) if math.isfinite(scaled) else spec.max_raw
    else:
        raw = round(scaled) if math.isfinite(scaled) else spec.max_raw
    return FixedValue(min(int(raw), spec.max_raw), spec.width)


def quantize_array(x: np.ndarray, spec: QuantSpec) -> np.ndarray:
    """Vectorized :func:`quantize`; returns raw magnitudes as ``uint16``."""
    x = np.asarray(x, dtype=np.float64)
    if np.any(x < 0) or np.any(np.isnan(x)):
        raise NegativeInput("cannot quantize negative values")
    scaled = x * spec.scale
    if spec.rounding is Rounding.TRUNCATE:
        raw = np.floor(scaled)
    else:
        raw = np.rint(scaled)
    return np.minimum(raw, spec.max_raw).astype(np.uint16)


def dequantize_array(raw: np.ndarray, spec: QuantSpec) -> np.ndarray:
    return np.asarray(raw, dtype=np.float64) / spec.scale


def msb_position(v: FixedValue | int) -> Optional[int]:
    raw = int(v)
    return raw.bit_length() - 1 if raw else None


def lsb_position(v: FixedValue | int) -> Optional[int]:
    raw = int(v)
    return (raw & -raw).bit_length() - 1 if raw else None


def essential_bits(v: FixedValue | int) -> int:
    return int(v).bit_count()


def msp2_truncate(v: FixedValue, budget: int) -> FixedValue:
    """Keep only the ``budget`` most significant set bits of ``v``.

    >>> msp2_truncate(FixedValue(0b10100101, 8), 2).raw == 0b10100000
    True
    """
    if budget < 0:
        raise ValueError("budget must be non-negative")
    raw, kept, remaining = int(v), 0, budget
    while raw and remaining:
        top = 1 << (raw.bit_length() - 1)
        kept |= top
        raw ^= top
        remaining -= 1
    width = v.width if isinstance(v, FixedValue) else MAX_WIDTH
    return FixedValue(kept, width)


def reduce_precision(v: FixedValue, n_high: int, n_low: int) -> FixedValue:
    """Restrict ``v`` to bit positions ``[n_low, n_high]`` (saturating above)."""
    raw = reduce_precision_array(np.array([int(v)]), n_high, n_low)[0]
    return FixedValue(int(raw), v.width)


# Array variants. Raw values are expected to fit in 16 bits.

MSB_LUT = np.array([int(x).bit_length() - 1 for x in range(1 << MAX_WIDTH)], dtype=np.int8)
LSB_LUT = np.array([(int(x) & -int(x)).bit_length() - 1 for x in range(1 << MAX_WIDTH)], dtype=np.int8)


def msb_array(raw: np.ndarray) -> np.ndarray:
    """Highest set bit per element, -1 for zero."""
    return MSB_LUT[np.asarray(raw, dtype=np.int64)]


def lsb_array(raw: np.ndarray) -> np.ndarray:
    """Lowest set bit per element, -1 for zero."""
    return LSB_LUT[np.asarray(raw, dtype=np.int64)]


def popcount_array(raw: np.ndarray) -> np.ndarray:
    return np.bitwise_count(np.asarray(raw, dtype=np.uint16)).astype(np.int64)


def msp2_truncate_array(raw: np.ndarray, budget: int) -> np.ndarray:
    """Vectorized MSP2 truncation: drop lowest set bits until ``budget`` remain."""
    if budget < 0:
        raise ValueError("budget must be non-negative")
    out = np.array(raw, dtype=np.int64, copy=True)
    while True:
        over = popcount_array(out) > budget
        if not over.any():
            return out.astype(np.uint16)
        out[over] &= out[over] - 1


def reduce_precision_array(raw: np.ndarray, n_high: int, n_low: int) -> np.ndarray:
    if not 0 <= n_low <= n_high < MAX_WIDTH:
        raise ValueError(f"invalid precision window ({n_high}, {n_low})")
    top = (1 << (n_high + 1)) - 1
    out = np.minimum(np.asarray(raw, dtype=np.int64), top)
    out &= ~((1 << n_low) - 1)
    return out.astype(np.uint16)
