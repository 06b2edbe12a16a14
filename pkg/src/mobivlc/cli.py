"""``mobivlc`` command line.

Exit codes: 0 success, 1 config error, 2 I/O error, 3 infeasible loading.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .harness import (
    ConfigError,
    SweepConfig,
    distribution_from_packets_csv,
    run_sweep,
    sweep_amplification,
    sweep_bias,
)
from .loading import InfeasibleLoading

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_INFEASIBLE = 0, 1, 2, 3


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _resolve_config(args) -> SweepConfig:
    cfg = SweepConfig.load(args.config) if args.config else SweepConfig()
    overrides = {}
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = _parse_value(v)
    if getattr(args, "schemes", None):
        overrides["schemes"] = [s.strip() for s in args.schemes.split(",") if s.strip()]
    if args.seed is not None:
        overrides["master_seed"] = args.seed
    if getattr(args, "packets", None) is not None:
        overrides["packets_per_point"] = args.packets
    if getattr(args, "replicates", None) is not None:
        overrides["replicate_count"] = args.replicates
    return cfg.with_overrides(overrides) if overrides else cfg


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file (defaults used when omitted)")
    p.add_argument("--out", default="out", help="output directory (default: ./out)")
    p.add_argument("--seed", type=int, help="override master_seed")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config field, dotted for nested ones (e.g. link.noise_std=0.1)")
    p.add_argument("--print-config", action="store_true", help="echo the resolved config and exit")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mobivlc", description="Mobile VLC link-level sweeps")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    sw = sub.add_parser("sweep", help="scheme x speed x distance packet-loss sweep")
    _common(sw)
    sw.add_argument("--schemes", help="comma-separated subset of OFDM,DMT,OCT")
    sw.add_argument("--packets", type=int, help="override packets_per_point")
    sw.add_argument("--replicates", type=int, help="override replicate_count")
    sw.add_argument("--packets-csv", action="store_true", help="also write per-packet packets.csv")

    for name, what in (("sweep-bias", "laser bias voltage"), ("sweep-amplification", "drive amplification")):
        p = sub.add_parser(name, help=f"stationary BER versus {what}")
        _common(p)

    rd = sub.add_parser("report-dist", help="BER distribution table from packets.csv")
    rd.add_argument("packets", help="packets.csv written by `sweep --packets-csv`")
    rd.add_argument("--out", default="-", help="output CSV path, '-' for stdout")
    return parser


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "report-dist":
            text = distribution_from_packets_csv(Path(args.packets).read_text())
            if args.out == "-":
                sys.stdout.write(text)
            else:
                _write(Path(args.out), text)
            return EXIT_OK

        cfg = _resolve_config(args)
        if args.print_config:
            print(cfg.to_json())
            return EXIT_OK
        out = Path(args.out)
        if args.command == "sweep":
            run_sweep(cfg, out, write_packets=args.packets_csv)
        elif args.command == "sweep-bias":
            _write(out / "bias.csv", sweep_bias(cfg))
        else:
            _write(out / "amplification.csv", sweep_amplification(cfg))
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InfeasibleLoading as exc:
        print(f"infeasible loading: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        # malformed packets.csv and similar input problems
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
