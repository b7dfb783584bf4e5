"""Command-line front end.

Exit codes: 0 on success, 2 for config errors, 3 for runtime contract
violations.  The output directory defaults to the config's ``out`` key and
can be overridden by ``--out`` or the ``FLWSIM_OUT`` environment variable.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from .config import parse_config
from .errors import ConfigError, ContractViolation
from .runner import RunManifest, compare_runs, run_experiment
from .training import RunTrace
from .wireless import canned_channel


def _cmd_run(args):
    text = Path(args.config).read_text(encoding="utf-8")
    cfg = parse_config(text)
    seed = args.seed if args.seed is not None else cfg.get("seed")
    trace, manifest = run_experiment(cfg, seed=seed)
    out_dir = Path(args.out or os.environ.get("FLWSIM_OUT") or cfg.get("out"))
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = f"{Path(args.config).stem}_s{seed}"
    trace_path = out_dir / f"{stem}.trace"
    trace_path.write_text(trace.to_text(), encoding="utf-8")
    (out_dir / f"{stem}.manifest.json").write_text(manifest.to_json(), encoding="utf-8")
    last = trace.records[-1]
    print(f"wrote {trace_path} ({len(trace.records)} rounds, "
          f"final train_loss {last.train_loss:.6g}, eval {last.eval_metric:.6g})")
    return 0


def _cmd_compare(args):
    named = []
    groups = {}
    for path in args.traces:
        p = Path(path)
        trace = RunTrace.from_text(p.read_text(encoding="utf-8"))
        name = p.stem
        named.append((name, trace))
        manifest_path = p.parent / (p.stem + ".manifest.json")
        if manifest_path.exists():
            manifest = RunManifest.from_json(manifest_path.read_text(encoding="utf-8"))
            groups[name] = manifest.config_hash[:12]
    print(compare_runs(named, args.metric, groups or None), end="")
    return 0


def _cmd_canned(args):
    if args.action != "list":
        raise ContractViolation(f"unknown canned action {args.action!r}")
    for name in ("fig1", "hfl", "reference"):
        obj = canned_channel(name)
        print(f"{name}: {type(obj).__name__}")
        doc = {
            "fig1": "  100-device single cell, 500 m disc, 20 scheduled, "
                    "10/15 dBm, B = 2e7 Hz, N0 = -204 dBW/Hz",
            "hfl": "  28 devices, 750 m disc, 7 hexagonal clusters "
                   "(inscribed diameter 500 m), 600 x 30 kHz subcarriers, "
                   "20 / 6.3 / 0.2 W, fronthaul 100x",
            "reference": "  multi-cluster SINR oracle layout "
                         "(threshold 1, path loss 4)",
        }[name]
        print(doc)
    return 0


def _cmd_validate(args):
    text = Path(args.config).read_text(encoding="utf-8")
    cfg = parse_config(text)  # raises ConfigError listing every problem
    print(f"ok: {args.config} ({cfg.config_hash[:12]})")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="flwsim",
        description="deterministic collaborative-learning simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one experiment from a config file")
    p_run.add_argument("config")
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--out", default=None)
    p_run.set_defaults(func=_cmd_run)

    p_cmp = sub.add_parser("compare", help="align traces and summarize a metric")
    p_cmp.add_argument("traces", nargs="+")
    p_cmp.add_argument("--metric", required=True,
                       choices=("train_loss", "eval_metric", "latency_s",
                                "uplink_bytes", "downlink_bytes", "max_age"))
    p_cmp.set_defaults(func=_cmd_compare)

    p_can = sub.add_parser("canned", help="inspect canned configurations")
    p_can.add_argument("action", choices=("list",))
    p_can.set_defaults(func=_cmd_canned)

    p_val = sub.add_parser("validate", help="check a config file")
    p_val.add_argument("config")
    p_val.set_defaults(func=_cmd_validate)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        for ln, msg in exc.errors:
            where = f"line {ln}: " if ln else ""
            print(f"config error: {where}{msg}", file=sys.stderr)
        return 2
    except ContractViolation as exc:
        print(f"contract violation: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
