"""Per-layer precision profiles and their JSON serialization."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .errors import ConfigError, MissingProfile
from .fixedpoint import MAX_WIDTH

FIXED = "fixed"
MSP2 = "msp2"


@dataclass(frozen=True)
class LayerPrecision:
    n_high: int
    n_low: int

    def __post_init__(self):
        if not 0 <= self.n_low <= self.n_high < MAX_WIDTH:
            raise ConfigError(f"invalid precision window ({self.n_high}, {self.n_low})")

    @property
    def span(self) -> int:
        return self.n_high - self.n_low + 1

    def contains(self, n_high: int, n_low: int) -> bool:
        return self.n_low <= n_low and n_high <= self.n_high


@dataclass
class PrecisionProfile:
    """Either per-layer ``(n_high, n_low)`` windows or per-layer MSP2 budgets.

    An MSP2 profile may also carry the windows its budgets were searched under.
    """

    mode: str
    windows: dict[str, LayerPrecision] = field(default_factory=dict)
    budgets: dict[str, int] = field(default_factory=dict)
    accuracy: Optional[float] = None
    baseline_accuracy: Optional[float] = None
    target: Optional[float] = None
    metric: Optional[str] = None

    def __post_init__(self):
        if self.mode not in (FIXED, MSP2):
            raise ConfigError(f"unknown profile mode {self.mode!r}")

    @property
    def layers(self) -> list[str]:
        return list(self.windows if self.mode == FIXED else self.budgets)

    def window(self, layer: str) -> LayerPrecision:
        if self.mode != FIXED:
            raise MissingProfile(f"profile is {self.mode}, not a fixed-point profile")
        try:
            return self.windows[layer]
        except KeyError:
            raise MissingProfile(f"no precision for layer {layer!r} in profile") from None

    def budget(self, layer: str) -> int:
        if self.mode != MSP2:
            raise MissingProfile(f"profile is {self.mode}, not an MSP2 profile")
        try:
            return self.budgets[layer]
        except KeyError:
            raise MissingProfile(f"no MSP2 budget for layer {layer!r} in profile") from None

    def to_dict(self) -> dict:
        if self.mode == FIXED:
            layers = {k: {"n_high": w.n_high, "n_low": w.n_low} for k, w in self.windows.items()}
        else:
            layers = {}
            for k, b in self.budgets.items():
                layers[k] = {"msp2_budget": b}
                if k in self.windows:
                    w = self.windows[k]
                    layers[k].update(n_high=w.n_high, n_low=w.n_low)
        return {
            "mode": self.mode,
            "layers": layers,
            "accuracy": self.accuracy,
            "baseline_accuracy": self.baseline_accuracy,
            "target": self.target,
            "metric": self.metric,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PrecisionProfile":
        mode = d.get("mode", FIXED)
        layers = d.get("layers")
        if not isinstance(layers, dict):
            raise ConfigError("profile needs a 'layers' mapping")
        prof = cls(mode, accuracy=d.get("accuracy"), baseline_accuracy=d.get("baseline_accuracy"),
                   target=d.get("target"), metric=d.get("metric"))
        for name, entry in layers.items():
            try:
                if mode == FIXED:
                    prof.windows[name] = LayerPrecision(int(entry["n_high"]), int(entry["n_low"]))
                else:
                    budget = int(entry["msp2_budget"])
                    if budget < 0:
                        raise ConfigError(f"negative MSP2 budget for layer {name!r}")
                    prof.budgets[name] = budget
                    if "n_high" in entry:
                        prof.windows[name] = LayerPrecision(int(entry["n_high"]), int(entry["n_low"]))
            except (KeyError, TypeError) as e:
                raise ConfigError(f"malformed profile entry for layer {name!r}: {e}") from None
        return prof

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "PrecisionProfile":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: not valid JSON ({e})") from None
