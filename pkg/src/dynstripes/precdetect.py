"""Runtime precision detection for a group of activations.

Functional model of the dispatcher front end: a per-bit OR network over the
group, a leading-1 and a trailing-1 detector over the OR vector, an offset
encoder, and the decrementing offset / end-of-group schedule sent to the SIPs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .errors import EmptyGroup, NotOneHot, WidthMismatch
from .fixedpoint import LSB_LUT, MAX_WIDTH, MSB_LUT, FixedValue


@dataclass(frozen=True)
class GroupPrecision:
    n_high: int
    n_low: int
    is_zero_group: bool = False

    def __post_init__(self):
        if not (0 <= self.n_low < MAX_WIDTH and 0 <= self.n_high < MAX_WIDTH):
            raise ValueError(f"bit index out of range: ({self.n_high}, {self.n_low})")
        if not self.is_zero_group and self.n_low > self.n_high:
            raise ValueError(f"n_low {self.n_low} above n_high {self.n_high}")

    @classmethod
    def zero(cls) -> "GroupPrecision":
        return cls(0, 0, True)

    def span(self) -> int:
        # An all-zero group still costs one cycle to emit its end-of-group.
        if self.is_zero_group:
            return 1
        return self.n_high - self.n_low + 1


@dataclass(frozen=True)
class OrVector:
    bits: tuple[bool, ...]

    @property
    def width(self) -> int:
        return len(self.bits)

    def as_int(self) -> int:
        return sum(1 << j for j, b in enumerate(self.bits) if b)

    @classmethod
    def from_int(cls, value: int, width: int) -> "OrVector":
        return cls(tuple(bool(value >> j & 1) for j in range(width)))


class Offset(NamedTuple):
    offset: int
    end_of_group: bool


def _raw_values(group: Iterable[FixedValue | int], width: int) -> list[int]:
    raws = []
    for v in group:
        if isinstance(v, FixedValue):
            if v.width != width:
                raise WidthMismatch(f"value has width {v.width}, group width is {width}")
            raw = v.raw
        else:
            raw = int(v)
            if not 0 <= raw < (1 << width):
                raise WidthMismatch(f"value {raw} does not fit in {width} bits")
        raws.append(raw)
    if not raws:
        raise EmptyGroup("precision detection needs at least one activation")
    return raws


def or_reduce(group: Sequence[FixedValue | int], width: int) -> OrVector:
    raws = _raw_values(group, width)
    bits = tuple(any(r >> j & 1 for r in raws) for j in range(width))
    return OrVector(bits)


def leading_one(or_vec: OrVector) -> int | None:
    """Priority encoder from the top bit; returns the one-hot position."""
    for j in reversed(range(or_vec.width)):
        if or_vec.bits[j]:
            return j
    return None


def trailing_one(or_vec: OrVector) -> int | None:
    """Same priority encoder with the input order reversed."""
    for j in range(or_vec.width):
        if or_vec.bits[j]:
            return j
    return None


def detect_precision(group: Sequence[FixedValue | int], width: int = MAX_WIDTH) -> GroupPrecision:
    or_vec = or_reduce(group, width)
    n_high = leading_one(or_vec)
    if n_high is None:
        return GroupPrecision.zero()
    return GroupPrecision(n_high, trailing_one(or_vec))


def encode_offset(one_hot: OrVector | int) -> int:
    """Binary encoding of a one-hot bit pattern."""
    value = one_hot.as_int() if isinstance(one_hot, OrVector) else int(one_hot)
    if value <= 0 or value & (value - 1):
        raise NotOneHot(f"{value:#b} is not one-hot")
    offset = 0
    while value > 1:
        value >>= 1
        offset += 1
    return offset


def offset_bits(width: int) -> int:
    """Wires needed to carry an offset for the given baseline width."""
    return max(1, (width - 1).bit_length())


def offset_schedule(p: GroupPrecision) -> list[Offset]:
    if p.is_zero_group:
        return [Offset(0, True)]
    return [Offset(j, j == p.n_low) for j in range(p.n_high, p.n_low - 1, -1)]


# Batched detection used by the cycle models.


class BatchPrecision(NamedTuple):
    n_high: np.ndarray
    n_low: np.ndarray
    is_zero: np.ndarray

    def spans(self) -> np.ndarray:
        return np.where(self.is_zero, 1, self.n_high.astype(np.int64) - self.n_low + 1)


def or_reduce_batch(groups: np.ndarray) -> np.ndarray:
    """OR over the last axis of an integer array of raw activations."""
    groups = np.asarray(groups)
    if groups.shape[-1] == 0:
        raise EmptyGroup("precision detection needs at least one activation")
    return np.bitwise_or.reduce(groups.astype(np.uint16), axis=-1)


def detect_batch(groups: np.ndarray) -> BatchPrecision:
    """Detect ``(n_high, n_low)`` for every group along the last axis.

    Zero groups report ``n_high = n_low = 0`` with ``is_zero`` set.
    """
    ors = or_reduce_batch(groups).astype(np.int64)
    zero = ors == 0
    n_high = np.where(zero, 0, MSB_LUT[ors]).astype(np.int64)
    n_low = np.where(zero, 0, LSB_LUT[ors]).astype(np.int64)
    return BatchPrecision(n_high, n_low, zero)
