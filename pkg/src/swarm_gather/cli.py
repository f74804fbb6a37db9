"""Command-line entry point: ``swarm-gather {run,sweep,presets,validate}``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

from .core import ConfigurationError, IntegrationBlowupError
from .experiment import (
    EXIT_CODES,
    PRESETS,
    emit,
    load_config,
    resolve_seed,
    run_experiment,
    summary,
    sweep,
    write_sweep,
)

EXIT_VALIDATION = EXIT_CODES["validation-error"]


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="swarm-gather", description="Simulate multi-agent gathering rules.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, needs_config=True):
        sp.add_argument("--config", type=Path, required=needs_config, help="JSON experiment config")
        sp.add_argument("--quiet", action="store_true", help="suppress the summary on stdout")

    r = sub.add_parser("run", help="run one experiment and write its files")
    common(r)
    r.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    r.add_argument("--out", type=Path, default=Path("out"), help="output directory")

    s = sub.add_parser("sweep", help="run a parameter grid over several seeds")
    common(s)
    s.add_argument("--grid", type=str, default="{}", help='JSON object, e.g. \'{"sigma": [0.1, 0.2]}\'')
    s.add_argument("--seeds", type=int, nargs="+", default=None, help="seeds to run (default: the resolved seed)")
    s.add_argument("--seed", type=int, default=None, help="single seed when --seeds is absent")
    s.add_argument("--out", type=Path, default=Path("out"), help="output directory")

    pr = sub.add_parser("presets", help="list named initial constellations")
    pr.add_argument("--quiet", action="store_true")

    v = sub.add_parser("validate", help="check a config without running it")
    common(v)
    return p


def _say(args, text: str) -> None:
    if not getattr(args, "quiet", False):
        print(text)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "presets":
            for name, (_, desc) in PRESETS.items():
                _say(args, f"{name}: {desc}")
            return 0
        cfg = load_config(args.config)
        if args.command == "validate":
            _say(args, "ok")
            return 0
        if args.command == "run":
            result = run_experiment(cfg, args.seed)
            emit(result, args.out)
            _say(args, json.dumps(summary(result), sort_keys=True))
            return result.exit_code
        if args.command == "sweep":
            grid = json.loads(args.grid)
            if not isinstance(grid, dict):
                raise ConfigurationError("grid: must be a JSON object")
            seeds = args.seeds if args.seeds else [resolve_seed(cfg, args.seed)]
            rows = sweep(cfg, grid, seeds)
            args.out.mkdir(parents=True, exist_ok=True)
            write_sweep(rows, args.out / "sweep.csv")
            _say(args, f"{len(rows)} runs written to {args.out / 'sweep.csv'}")
            return 0
    except (ConfigurationError, json.JSONDecodeError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except IntegrationBlowupError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CODES["invariant-violated"]
    return EXIT_VALIDATION  # pragma: no cover


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
