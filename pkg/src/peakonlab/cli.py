"""Command-line entry point.

Subcommands ``simulate``, ``converge-dx``, ``converge-dt`` and ``ensemble``
run an experiment; ``diagnose`` recomputes Pi and omega from stored
``diagnostics_n<cells>.csv`` files.  Values are layered as preset defaults,
then ``--config`` file keys, then command-line flags.
"""
from __future__ import annotations

import argparse
import json
import logging
import re
import sys
from pathlib import Path

from .config import PARSERS, PRESETS, ConfigError, build_config, parse_value, read_config_file
from .diagnostics import summarize
from .solver import SolverError

__all__ = ["main", "build_parser"]

log = logging.getLogger("peakonlab")

# fixed preset for the study subcommands; simulate takes --preset
_COMMAND_PRESET = {"converge-dx": "converge-dx", "converge-dt": "converge-dt", "ensemble": "ensemble"}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def _flag(key):
    return "--" + key.replace("_", "-")


def _add_config_flags(p):
    p.add_argument("--config", metavar="FILE", help="flat 'key = value' configuration file")
    for key in PARSERS:
        if key == "preset":
            continue
        p.add_argument(_flag(key), dest=key, metavar="VALUE", default=None)
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="peakonlab", description="Stochastic Camassa-Holm peakon experiments.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sim = sub.add_parser("simulate", help="run a deterministic (or fixed-path) multi-resolution experiment")
    sim.add_argument("--preset", choices=PRESETS, default=None)
    _add_config_flags(sim)
    for name in _COMMAND_PRESET:
        _add_config_flags(sub.add_parser(name, help=f"run the {name} study"))
    diag = sub.add_parser("diagnose", help="recompute Pi and omega from stored diagnostics")
    diag.add_argument("dirs", nargs="+", type=Path)
    diag.add_argument("--L", type=float, default=None, help="domain length (default: read from summary.json)")
    diag.add_argument("--window-t0", type=float, default=None)
    diag.add_argument("--window-t1", type=float, default=None)
    diag.add_argument("-v", "--verbose", action="store_true")
    return parser


def _resolve_config(args):
    values = read_config_file(args.config) if args.config else {}
    for key in PARSERS:
        raw = getattr(args, key, None)
        if raw is not None and key != "preset":
            values[key] = parse_value(key, raw)
    preset = _COMMAND_PRESET.get(args.command)
    file_preset = values.pop("preset", None)
    if preset is None:
        preset = args.preset or file_preset or "deterministic-steep"
    elif file_preset not in (None, preset):
        raise ConfigError(f"config preset {file_preset!r} conflicts with the {args.command} subcommand")
    return build_config(preset, values)


def _run(config):
    from . import experiments as ex

    if config.preset == "converge-dx":
        t = ex.run_converge_dx(config)
        return {"order": t.order, "dx": t.steps.tolist(), "error": t.errors.tolist()}
    if config.preset == "converge-dt":
        t = ex.run_converge_dt(config)
        return {"order": t.order, "dt": t.steps.tolist(), "error": t.errors.tolist()}
    if config.preset == "ensemble":
        r = ex.run_ensemble(config)
        return {"realizations": len(r.rows), "failures": r.failures,
                "Pi": r.Pi.tolist(), "omega": r.omega.tolist()}
    res = ex.run_deterministic(config)
    if res.summary is None:
        return {"Pi": None, "omega": None}
    return {"Pi": res.summary.Pi, "omega": res.summary.omega}


_DIAG_FILE = re.compile(r"diagnostics_n(\d+)\.csv$")


def _diagnose(args):
    from .experiments import read_series_csv

    found = []
    L, window = args.L, None
    for d in args.dirs:
        if not d.is_dir():
            raise ConfigError(f"{d} is not a directory")
        summary = d / "summary.json"
        if summary.exists():
            cfg = json.loads(summary.read_text()).get("config", {})
            if L is None:
                L = cfg.get("L")
            if window is None and "window_t0" in cfg:
                window = (cfg["window_t0"], cfg["window_t1"])
        for f in sorted(d.iterdir()):
            m = _DIAG_FILE.search(f.name)
            if m:
                found.append((int(m.group(1)), f))
    if L is None:
        raise ConfigError("domain length unknown: pass --L or keep summary.json next to the diagnostics")
    if not found:
        raise ConfigError("no diagnostics_n<cells>.csv files found")
    counts = [n for n, _ in found]
    if len(set(counts)) != len(counts):
        raise ConfigError("the same resolution appears more than once")
    window = list(window or (15.0, 20.0))
    if args.window_t0 is not None:
        window[0] = args.window_t0
    if args.window_t1 is not None:
        window[1] = args.window_t1
    series = [read_series_csv(f, L / n) for n, f in sorted(found)]
    try:
        s = summarize(series, tuple(window))
    except ValueError as err:
        raise ConfigError(str(err)) from None
    return {"Pi": s.Pi, "omega": s.omega, "cells": sorted(counts), "window": window}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        if args.command == "diagnose":
            result = _diagnose(args)
        else:
            result = _run(_resolve_config(args))
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except SolverError as err:
        print(f"solver failure: {err}", file=sys.stderr)
        return 1
    except ValueError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    print(json.dumps(result, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
