"""Command-line entry point: ``l1imaging <subcommand> --config cfg.json``.

Exit codes: 0 success, 2 configuration error, 3 hypothesis failure or
infeasible problem, 4 solver non-convergence.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

SUBCOMMANDS = {
    "recover": "recover",
    "coherence": "coherence",
    "solve": "solve",
    "bounds": "bounds",
    "resolve-sweep": "resolve_sweep",
    "separated": "separated",
    "cluster": "cluster",
    "validate-paraxial": "validate_paraxial",
}
# config "kind" spellings accepted as aliases of a subcommand
_KIND_ALIASES = {"bounds_report": "bounds"}

EXIT_OK, EXIT_CONFIG, EXIT_HYPOTHESIS, EXIT_NONCONVERGENCE = 0, 2, 3, 4
_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                "VECLIB_MAXIMUM_THREADS", "NUMEXPR_NUM_THREADS")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="l1imaging", description="Sparse array imaging experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, type=Path, help="JSON experiment config")
        p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
        p.add_argument("--out", type=Path, default=None, help="directory for report.json and CSV tables")
        p.add_argument("--threads", type=int, default=None, help="BLAS thread count")
    return parser


def _set_threads(n: int | None) -> None:
    # Must run before numpy is first imported to take effect.
    if n is None:
        return
    if n < 1:
        raise SystemExit("--threads must be positive")
    for var in _THREAD_VARS:
        os.environ[var] = str(n)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    _set_threads(args.threads)

    from . import experiments
    from .errors import ConfigError, HypothesisError, InfeasibleError, NonConvergenceError

    kind = SUBCOMMANDS[args.command]
    try:
        if args.seed is not None and not 0 <= args.seed < 2 ** 64:
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        cfg = experiments.load_config(args.config)
        declared = cfg.get("kind")
        if declared is not None:
            declared = _KIND_ALIASES.get(declared, declared)
            if declared.replace("-", "_") != kind:
                raise ConfigError(f"config kind {cfg['kind']!r} does not match subcommand {args.command!r}")
        report = experiments.run(kind, cfg, args.seed, args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (HypothesisError, InfeasibleError) as exc:
        print(f"hypothesis failure: {exc}", file=sys.stderr)
        return EXIT_HYPOTHESIS
    except NonConvergenceError as exc:
        print(f"non-convergence: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except FileNotFoundError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    if args.out is None:
        json.dump(report, sys.stdout, indent=2, default=experiments._json_default)
        sys.stdout.write("\n")
    if not report.get("all_converged", True):
        print("non-convergence: at least one solve hit its iteration cap", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
