"""Command-line front end: ``dstripes {gen-trace,profile,simulate,report}``.

Relative ``--out`` paths are resolved under ``$DSTRIPES_OUTPUT_DIR`` when it
is set.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .engine import ArchConfig, EngineKind, envelope_profile
from .errors import ConfigError, DStripesError
from .profile import MSP2, PrecisionProfile
from .profiler import METRICS, profile_fixedpoint, profile_msp2
from .report import build_report, format_table, to_csv, to_json
from .tinynet import TinyNet, default_net_config, random_inputs, run_reference
from .trace import SyntheticSpec, gen_synthetic, read_trace, trace_checksum, write_trace

log = logging.getLogger("dstripes")

OUTPUT_DIR_ENV = "DSTRIPES_OUTPUT_DIR"
ENGINES = [k.value for k in EngineKind]


class CliError(Exception):
    pass


def _out_path(path: str) -> Path:
    p = Path(path)
    base = os.environ.get(OUTPUT_DIR_ENV)
    if base and not p.is_absolute():
        p = Path(base) / p
    return p


def _check_writable(path: Path, force: bool) -> None:
    if path.exists() and not force:
        raise CliError(f"refusing to overwrite {path} (use --force)")
    path.parent.mkdir(parents=True, exist_ok=True)


def _load(what: str, path: str, loader):
    try:
        return loader(path)
    except FileNotFoundError:
        raise CliError(f"{what} {path}: no such file") from None
    except (DStripesError, OSError, ValueError) as e:
        raise CliError(f"{what} {path}: {e}") from None


def _load_net(args) -> TinyNet:
    if args.net:
        return _load("net config", args.net, TinyNet.load)
    return TinyNet.from_dict(default_net_config(args.seed))


def _eval_inputs(args, net: TinyNet) -> np.ndarray:
    if getattr(args, "inputs", None):
        return _load("inputs", args.inputs, np.load)
    return random_inputs(net, args.batch, args.seed)


def _shifter_reach(text: str) -> Optional[int]:
    if text == "full":
        return None
    try:
        k = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'full' or a bit count, got {text!r}") from None
    if k < 0:
        raise argparse.ArgumentTypeError("shifter reach must be non-negative")
    return k


def cmd_gen_trace(args) -> int:
    out = _out_path(args.out)
    _check_writable(out, args.force)
    if args.synthetic:
        spec = _load("synthetic spec", args.synthetic, SyntheticSpec.load)
        try:
            trace = gen_synthetic(spec, args.seed)
        except DStripesError as e:
            raise CliError(f"synthetic spec {args.synthetic}: {e}") from None
    else:
        net = _load_net(args)
        inputs = _eval_inputs(args, net)
        try:
            trace, _ = run_reference(net, inputs)
        except DStripesError as e:
            raise CliError(f"net {args.net or 'default'}: {e}") from None
    write_trace(trace, out)
    print(f"{out} sha256={trace_checksum(trace)} layers={len(trace.layers)}")
    return 0


def cmd_profile(args) -> int:
    out = _out_path(args.out)
    _check_writable(out, args.force)
    if not 0.0 <= args.target <= 1.0:
        raise CliError(f"--target must be in [0, 1], got {args.target}")
    if args.windows and args.mode != "msp2":
        raise CliError("--windows only applies to --mode msp2")
    windows = None
    if args.windows:
        base = _load("profile", args.windows, PrecisionProfile.load)
        if base.mode != "fixed":
            raise CliError(f"profile {args.windows}: expected a fixed-point profile, got {base.mode}")
        windows = base.windows
    net = _load_net(args)
    inputs = _eval_inputs(args, net)
    if windows is not None and set(windows) != set(net.act_layers):
        raise CliError(f"profile {args.windows}: layers {sorted(windows)} do not match the net")
    if args.mode == "fixed":
        prof = profile_fixedpoint(net, inputs, args.target, args.metric)
    else:
        prof = profile_msp2(net, inputs, args.target, args.metric, windows=windows)
    prof.save(out)
    summary = ", ".join(
        f"{k}=({w.n_high},{w.n_low})" for k, w in prof.windows.items()
    ) if args.mode == "fixed" else ", ".join(f"{k}={b}" for k, b in prof.budgets.items())
    print(f"{out}: {summary} accuracy={prof.accuracy:.3f}")
    return 0


def _network_names(paths: list[str]) -> list[str]:
    names, seen = [], {}
    for p in paths:
        stem = Path(p).stem
        seen[stem] = seen.get(stem, 0) + 1
        names.append(stem if seen[stem] == 1 else f"{stem}#{seen[stem]}")
    return names


def cmd_simulate(args) -> int:
    out = _prepare_out(args)
    engines = list(dict.fromkeys(args.engine or ["bitparallel", "stripes", "dynamic", "essential"]))
    traces = [(name, _load("trace", p, read_trace))
              for name, p in zip(_network_names(args.traces), args.traces)]
    base_width = args.base_width or max(t.base_width for _, t in traces)
    for (name, t), path in zip(traces, args.traces):
        if t.base_width > base_width:
            raise CliError(f"trace {path}: base width {t.base_width} exceeds --base-width {base_width}")

    profile = None
    if args.profile:
        profile = _load("profile", args.profile, PrecisionProfile.load)
        if profile.mode != "fixed":
            raise CliError(f"profile {args.profile}: expected a fixed-point profile, got {profile.mode}")
    msp2 = None
    if args.msp2_profile:
        msp2 = _load("msp2 profile", args.msp2_profile, PrecisionProfile.load)
        if msp2.mode != MSP2:
            raise CliError(f"msp2 profile {args.msp2_profile}: not an MSP2 profile")

    if args.envelope_profile:
        if profile is not None:
            raise CliError("--profile and --envelope-profile are mutually exclusive")
        profile = [envelope_profile(t) for _, t in traces]
    if "stripes" in engines and profile is None:
        raise CliError("the stripes engine needs --profile or --envelope-profile")

    try:
        cfgs = [ArchConfig(kind=e, pallet_size=args.pallet_size, subgroup_size=args.subgroup_size,
                           base_width=base_width,
                           shifter_reach=args.shifter_reach if e == "essential" else None,
                           msp2_budget_source="profile" if (msp2 is not None and e == "essential") else "none")
                for e in engines]
    except ConfigError as e:
        raise CliError(str(e)) from None

    try:
        report = build_report(traces, cfgs, profile, msp2)
    except DStripesError as e:
        raise CliError(f"simulation failed: {e}") from None

    text = to_json(report) if args.format == "json" else to_csv(report)
    _emit(text, out)
    return 0


def _prepare_out(args) -> Optional[Path]:
    if not args.out:
        return None
    out = _out_path(args.out)
    _check_writable(out, args.force)
    return out


def _emit(text: str, out: Optional[Path]) -> None:
    if out is not None:
        out.write_text(text)
        log.info("wrote %s", out)
    else:
        sys.stdout.write(text)


def cmd_report(args) -> int:
    out = _prepare_out(args)

    def load_json(path):
        return json.loads(Path(path).read_text())

    report = _load("report", args.report, load_json)
    if not isinstance(report, dict) or "networks" not in report:
        raise CliError(f"report {args.report}: not a simulate JSON report")
    if args.format == "json":
        text = to_json(report)
    elif args.format == "csv":
        text = to_csv(report)
    else:
        text = format_table(report)
    _emit(text, out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dstripes", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_net_args(p):
        p.add_argument("--net", help="TinyNet JSON config (default: built-in 4-layer net)")
        p.add_argument("--inputs", help=".npy batch of inputs (default: random from --seed)")
        p.add_argument("--batch", type=int, default=8, help="random input count (default 8)")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--force", action="store_true", help="overwrite existing output")

    g = sub.add_parser("gen-trace", help="write an activation trace")
    add_net_args(g)
    g.add_argument("--synthetic", help="synthetic span-distribution spec (JSON) instead of a net")
    g.add_argument("--out", "-o", required=True)
    g.set_defaults(func=cmd_gen_trace)

    p = sub.add_parser("profile", help="search per-layer precisions or MSP2 budgets")
    add_net_args(p)
    p.add_argument("--mode", choices=["fixed", "msp2"], default="fixed")
    p.add_argument("--target", type=float, default=1.0, help="required agreement fraction")
    p.add_argument("--metric", choices=METRICS, default="top1")
    p.add_argument("--windows", help="msp2 mode: fixed-point profile to search budgets under "
                                     "(default: search one first)")
    p.add_argument("--out", "-o", required=True)
    p.set_defaults(func=cmd_profile)

    s = sub.add_parser("simulate", help="cycle counts and speedups")
    s.add_argument("traces", nargs="+")
    s.add_argument("--engine", action="append", choices=ENGINES,
                   help="repeatable (default: all engines)")
    s.add_argument("--profile", help="fixed-point precision profile (JSON)")
    s.add_argument("--envelope-profile", action="store_true",
                   help="derive each trace's tight per-layer envelope as the Stripes profile")
    s.add_argument("--msp2-profile", help="MSP2 budgets for the essential engine (JSON)")
    s.add_argument("--subgroup-size", type=int, default=16)
    s.add_argument("--pallet-size", type=int, default=256)
    s.add_argument("--base-width", type=int, default=None)
    s.add_argument("--shifter-reach", type=_shifter_reach, default=None, metavar="{full,K}")
    s.add_argument("--format", choices=["csv", "json"], default="csv")
    s.add_argument("--out", "-o")
    s.add_argument("--force", action="store_true")
    s.set_defaults(func=cmd_simulate)

    r = sub.add_parser("report", help="render a simulate JSON report")
    r.add_argument("report")
    r.add_argument("--format", choices=["table", "csv", "json"], default="table")
    r.add_argument("--out", "-o")
    r.add_argument("--force", action="store_true")
    r.set_defaults(func=cmd_report)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as e:
        print(f"dstripes: error: {e}", file=sys.stderr)
        return 1
    except (DStripesError, OSError) as e:
        print(f"dstripes: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
