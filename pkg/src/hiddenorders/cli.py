"""Command-line entry point: ``hiddenorders <subcommand> [options]``.

Exit codes: 0 success, 2 input or parse error, 3 precondition or
insufficient data, 4 internal error, 66 missing input file.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import fields
from pathlib import Path
from typing import List, Optional

import pandas as pd

from .errors import ConfigError, InsufficientDataError
from .pipeline import (RunConfig, read_config_file, run_pipeline, stage_detect, stage_impact,
                       stage_metrics, stage_pca, stage_profile, stage_score)
from .synth import SynthConfig, generate
from .tape import TapeError

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_PRECONDITION = 3
EXIT_INTERNAL = 4
EXIT_NO_INPUT = 66

log = logging.getLogger("hiddenorders")

STAGES = {
    "detect": stage_detect,
    "metrics": stage_metrics,
    "impact": stage_impact,
    "pca": stage_pca,
    "profile": stage_profile,
    "score": stage_score,
    "run": run_pipeline,
}

HELP = {
    "synth": "generate a synthetic market with known hidden orders",
    "detect": "sign trades and detect hidden orders -> hidden_orders.csv",
    "metrics": "f_mo and participation rate per order -> orders_metrics.csv",
    "impact": "impact curves, fits, reversion and ensemble statistics",
    "pca": "allometric exponents g1, g2, g3 with bootstrap CIs",
    "profile": "trading profile and start/end time histograms",
    "score": "compare detected orders with ground truth",
    "run": "all analysis stages on one tape",
}


def _add_field_flags(p: argparse.ArgumentParser, names: List[str]) -> None:
    for name in names:
        p.add_argument("--" + name.replace("_", "-"), dest=name, default=None, metavar="VALUE")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hiddenorders", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth", help=HELP["synth"])
    sp.add_argument("--out", required=True)
    sp.add_argument("--config", help="key = value file with synth options")
    _add_field_flags(sp, [f.name for f in fields(SynthConfig)])

    run_fields = [f.name for f in fields(RunConfig)]
    for name in STAGES:
        p = sub.add_parser(name, help=HELP[name])
        p.add_argument("--config", help="key = value file; command-line flags take precedence")
        _add_field_flags(p, run_fields)
    return parser


def _collect(args, names, config_file: Optional[str]) -> dict:
    values = dict(read_config_file(config_file)) if config_file else {}
    for name in names:
        v = getattr(args, name, None)
        if v is not None:
            values[name] = v
    return values


def _run(args) -> int:
    if args.command == "synth":
        names = [f.name for f in fields(SynthConfig)]
        try:
            cfg = SynthConfig.from_mapping(_collect(args, names, args.config))
        except (KeyError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        t0 = time.perf_counter()
        market = generate(cfg)
        paths = market.write(args.out)
        summary = {"trades": market.tape.n_trades, "orders": len(market.truth), "seed": cfg.seed,
                   "wall_seconds": round(time.perf_counter() - t0, 3),
                   "files": {k: str(v) for k, v in sorted(paths.items())}}
        print(json.dumps(summary, indent=2, sort_keys=True))
        return EXIT_OK

    names = [f.name for f in fields(RunConfig)]
    cfg = RunConfig.from_mapping(_collect(args, names, args.config))
    args._out = cfg.out
    result = STAGES[args.command](cfg)
    if args.command == "score":
        print(json.dumps(result, indent=2, sort_keys=True))
    else:
        print(f"{args.command}: outputs in {cfg.out}")
    return EXIT_OK


def _mark_failed(args, exc: BaseException, code: int) -> None:
    out = getattr(args, "_out", None) or getattr(args, "out", None)
    if not out or not Path(out).is_dir():
        return
    Path(out, "FAILED").write_text(f"{args.command}: exit {code}: {type(exc).__name__}: {exc}\n", encoding="utf-8")


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _run(args)
    except FileNotFoundError as exc:
        err, code, msg = exc, EXIT_NO_INPUT, f"input file not found: {exc.filename or exc.args[0]}"
    except InsufficientDataError as exc:
        err, code, msg = exc, EXIT_PRECONDITION, str(exc)
    except (TapeError, ConfigError, pd.errors.ParserError, UnicodeDecodeError) as exc:
        err, code, msg = exc, EXIT_INPUT, str(exc)
    except Exception as exc:  # noqa: BLE001 - last-resort mapping to the internal-error code
        log.debug("internal error", exc_info=True)
        err, code, msg = exc, EXIT_INTERNAL, f"internal error: {type(exc).__name__}: {exc}"
    print(f"hiddenorders {args.command}: {msg}", file=sys.stderr)
    _mark_failed(args, err, code)
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
