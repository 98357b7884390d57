"""Speedup reports over one or more traces, with per-network and geometric-mean rows."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import replace
from typing import Optional, Sequence

from .engine import ArchConfig, EngineKind, geomean, simulate_trace, speedup
from .profile import PrecisionProfile
from .trace import ActivationTrace

CSV_FIELDS = ["network", "layer", "engine", "cycles", "pallets", "vs_str", "vs_dadn"]


def _r2(x) -> Optional[float]:
    return None if x is None else round(float(x), 2)


def build_report(traces: Sequence[tuple[str, ActivationTrace]], engines: Sequence[ArchConfig],
                 profile: PrecisionProfile | Sequence[PrecisionProfile] | None = None,
                 msp2_profile: Optional[PrecisionProfile] = None) -> dict:
    """Simulate every trace on every engine.

    Speedups are always taken against a bit-parallel run ("vs_dadn") and,
    when a fixed-point profile is available, against per-layer Stripes
    ("vs_str"), whether or not those engines were requested. ``profile`` may
    be a single profile or one per trace.
    """
    if not engines:
        raise ValueError("no engines selected")
    if isinstance(profile, (list, tuple)):
        if len(profile) != len(traces):
            raise ValueError("need exactly one profile per trace")
        profiles = list(profile)
    else:
        profiles = [profile] * len(traces)
    geometry = engines[0]
    bp_cfg = replace(geometry, kind=EngineKind.BIT_PARALLEL, shifter_reach=None, msp2_budget_source="none")
    str_cfg = replace(bp_cfg, kind=EngineKind.STRIPES)

    networks = []
    ratios: dict[str, dict[str, list]] = {}
    for (name, trace), profile in zip(traces, profiles):
        bp = simulate_trace(trace, bp_cfg)
        st = simulate_trace(trace, str_cfg, profile) if profile is not None else None
        layers, totals, speedups = [], {}, {}
        for cfg in engines:
            reps = simulate_trace(trace, cfg, profile, msp2_profile)
            for i, rep in enumerate(reps):
                row = rep.to_dict()
                row["vs_dadn"] = _r2(speedup(rep, bp[i]))
                row["vs_str"] = _r2(speedup(rep, st[i])) if st is not None else None
                layers.append(row)
            totals[cfg.label] = sum(r.cycles for r in reps)
            s_dadn = speedup(reps, bp)
            s_str = speedup(reps, st) if st is not None else None
            speedups[cfg.label] = {"vs_str": _r2(s_str), "vs_dadn": _r2(s_dadn)}
            acc = ratios.setdefault(cfg.label, {"vs_str": [], "vs_dadn": []})
            acc["vs_dadn"].append(s_dadn)
            if s_str is not None:
                acc["vs_str"].append(s_str)
        networks.append({"name": name, "layers": layers, "totals": totals, "speedup": speedups})

    summary = {}
    for label, acc in ratios.items():
        summary[label] = {
            "vs_str": _r2(geomean(acc["vs_str"])) if len(acc["vs_str"]) == len(traces) else None,
            "vs_dadn": _r2(geomean(acc["vs_dadn"])),
        }
    return {
        "config": {
            "engines": [c.label for c in engines],
            "pallet_size": geometry.pallet_size,
            "subgroup_size": geometry.subgroup_size,
            "base_width": geometry.base_width,
            "profile": any(p is not None for p in profiles),
            "msp2_profile": msp2_profile is not None,
        },
        "networks": networks,
        "geomean": summary,
    }


def report_rows(report: dict) -> list[dict]:
    rows = []
    for net in report["networks"]:
        for layer in net["layers"]:
            rows.append({"network": net["name"], "layer": layer["name"], "engine": layer["engine"],
                         "cycles": layer["cycles"], "pallets": layer["pallets"],
                         "vs_str": layer["vs_str"], "vs_dadn": layer["vs_dadn"]})
        for engine, total in net["totals"].items():
            pallets = sum(l["pallets"] for l in net["layers"] if l["engine"] == engine)
            rows.append({"network": net["name"], "layer": "TOTAL", "engine": engine,
                         "cycles": total, "pallets": pallets, **net["speedup"][engine]})
    for engine, s in report["geomean"].items():
        rows.append({"network": "GeoMean", "layer": "", "engine": engine,
                     "cycles": None, "pallets": None, **s})
    return rows


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.2f}"
    return str(v)


def to_csv(report: dict) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
    w.writeheader()
    for row in report_rows(report):
        w.writerow({k: _fmt(v) for k, v in row.items()})
    return buf.getvalue()


def to_json(report: dict) -> str:
    return json.dumps(report, indent=2) + "\n"


def format_table(report: dict) -> str:
    """Human-readable summary: one line per network and engine, plus GeoMean."""

    def x(v):
        return "-" if v is None else f"{v:.2f}x"

    lines = [f"{'Network':<16} {'Engine':<14} {'vs STR':>8} {'vs DaDN':>8}"]
    for net in report["networks"]:
        for engine, s in net["speedup"].items():
            lines.append(f"{net['name']:<16} {engine:<14} {x(s['vs_str']):>8} {x(s['vs_dadn']):>8}")
    for engine, s in report["geomean"].items():
        lines.append(f"{'GeoMean':<16} {engine:<14} {x(s['vs_str']):>8} {x(s['vs_dadn']):>8}")
    return "\n".join(lines) + "\n"
