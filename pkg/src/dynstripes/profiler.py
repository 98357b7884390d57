"""Offline search for per-layer precision windows and MSP2 budgets.

Both searches are greedy coordinate descents over the network's ReLU layers,
swept first to last until a full sweep changes nothing. A candidate is kept
only if the reduced network still agrees with the unreduced fixed-point run on
at least ``target`` of the evaluation inputs.
"""

from __future__ import annotations

import logging
import math
from typing import Callable, Mapping, Optional

import numpy as np

from .profile import FIXED, MSP2, LayerPrecision, PrecisionProfile
from .tinynet import TinyNet, run_reference

log = logging.getLogger(__name__)

METRICS = ("top1", "exact")


def agreement(logits: np.ndarray, reference: np.ndarray, metric: str = "top1") -> float:
    """Fraction of inputs whose output matches the reference.

    ``top1`` compares argmax decisions; ``exact`` requires identical outputs.
    """
    if logits.shape != reference.shape:
        raise ValueError(f"logit shapes differ: {logits.shape} vs {reference.shape}")
    if metric == "top1":
        hits = logits.argmax(axis=1) == reference.argmax(axis=1)
    elif metric == "exact":
        hits = np.all(logits == reference, axis=1)
    else:
        raise ValueError(f"unknown metric {metric!r}; expected one of {METRICS}")
    return float(hits.mean()) if hits.size else 1.0


class _Evaluator:
    def __init__(self, net: TinyNet, inputs: np.ndarray, target: float, metric: str):
        if not 0.0 <= target <= 1.0:
            raise ValueError(f"target must be in [0, 1], got {target}")
        if metric not in METRICS:
            raise ValueError(f"unknown metric {metric!r}; expected one of {METRICS}")
        self.net, self.inputs, self.target, self.metric = net, inputs, target, metric
        _, self.reference = run_reference(net, inputs)
        _, real = run_reference(net, inputs, quantize=False)
        self.baseline_accuracy = agreement(self.reference, real, "top1")
        self.evaluations = 0

    def score(self, **reductions) -> float:
        self.evaluations += 1
        _, logits = run_reference(self.net, self.inputs, **reductions)
        return agreement(logits, self.reference, self.metric)

    def accepts(self, **reductions) -> bool:
        return self.score(**reductions) >= self.target


def _descend(layers: list[str], state: dict, steps: Callable[[object], list],
             accepts: Callable[[dict], bool]) -> dict:
    changed = True
    while changed:
        changed = False
        for name in layers:
            for make in steps(state[name]):
                cand = make(state[name])
                if cand is None:
                    continue
                trial = {**state, name: cand}
                if accepts(trial):
                    state = trial
                    changed = True
    return state


def _tighten_high(w: LayerPrecision) -> Optional[LayerPrecision]:
    return LayerPrecision(w.n_high - 1, w.n_low) if w.n_high > w.n_low else None


def _tighten_low(w: LayerPrecision) -> Optional[LayerPrecision]:
    return LayerPrecision(w.n_high, w.n_low + 1) if w.n_low < w.n_high else None


def _levels(target: float, n_inputs: int) -> list[float]:
    """Achievable agreement levels from 1 down to the one ``target`` rounds up to."""
    if n_inputs == 0:
        return [target]
    lowest = math.ceil(target * n_inputs - 1e-9)
    return [k / n_inputs for k in range(n_inputs, lowest - 1, -1)]


def profile_fixedpoint(net: TinyNet, inputs: np.ndarray, target: float = 1.0,
                       metric: str = "top1",
                       start: Optional[Mapping[str, LayerPrecision]] = None) -> PrecisionProfile:
    """Greedy per-layer precision windows that keep agreement at or above ``target``.

    The descent is run once per achievable agreement level, from 1 down to
    ``target``, each run starting where the stricter one stopped. A looser
    target therefore never yields a wider window for any layer.
    """
    ev = _Evaluator(net, inputs, target, metric)
    layers = net.act_layers
    state = {name: LayerPrecision(net.act_quant(name).width - 1, 0) for name in layers}
    if start:
        state.update(start)
    initial = state
    if not ev.accepts(windows=state):
        log.warning("starting precision already misses the target; keeping it")
    else:
        for level in _levels(target, len(inputs)):
            state = _descend(layers, state, lambda w: [_tighten_high, _tighten_low],
                             lambda s, lv=level: ev.score(windows=s) >= lv)
    accuracy = ev.score(windows=state)
    if accuracy < target and state is not initial:
        raise RuntimeError(f"profile re-check failed: {accuracy} < {target}")
    log.info("fixed-point profile after %d evaluations: %s", ev.evaluations,
             {k: (v.n_high, v.n_low) for k, v in state.items()})
    return PrecisionProfile(FIXED, windows=dict(state), accuracy=accuracy,
                            baseline_accuracy=ev.baseline_accuracy, target=target, metric=metric)


def profile_msp2(net: TinyNet, inputs: np.ndarray, target: float = 1.0,
                 metric: str = "top1", min_budget: int = 1,
                 windows: Optional[Mapping[str, LayerPrecision]] = None) -> PrecisionProfile:
    """Greedy per-layer MSP2 budgets on top of per-layer precision windows.

    Without ``windows`` a fixed-point profile is searched first with the same
    target. Each budget starts at its layer's span, which every windowed value
    already fits, so the result never exceeds the fixed-point spans.
    """
    if windows is None:
        windows = profile_fixedpoint(net, inputs, target, metric).windows
    windows = dict(windows)
    ev = _Evaluator(net, inputs, target, metric)
    layers = net.act_layers
    state = {name: (windows[name].span if name in windows else net.act_quant(name).width)
             for name in layers}

    def fewer(b: int) -> Optional[int]:
        return b - 1 if b > min_budget else None

    for level in _levels(target, len(inputs)):
        state = _descend(layers, state, lambda b: [fewer],
                         lambda s, lv=level: ev.score(windows=windows, budgets=s) >= lv)
    accuracy = ev.score(windows=windows, budgets=state)
    if accuracy < target:
        raise RuntimeError(f"profile re-check failed: {accuracy} < {target}")
    log.info("MSP2 profile after %d evaluations: %s", ev.evaluations, state)
    return PrecisionProfile(MSP2, windows=windows, budgets=dict(state), accuracy=accuracy,
                            baseline_accuracy=ev.baseline_accuracy, target=target, metric=metric)
