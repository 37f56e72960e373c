"""Command line entry point: ``rigidlab run|validate|compare``.

Exit codes: 0 when the run passes, 2 for a failed check (a falsification
witness in the rigidity pipelines), 1 for any error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import io
from .experiment import ConfigError, compare_runs, load_config, run_experiment

EXIT_OK, EXIT_ERROR, EXIT_WITNESS = 0, 1, 2

log = logging.getLogger("rigidlab")


def _parser():
    p = argparse.ArgumentParser(prog="rigidlab", description="Rigidity experiments for plane-wave scattering data.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="verb", required=True)

    run = sub.add_parser("run", help="execute the pipeline named in a config")
    run.add_argument("--config", required=True, type=Path)
    run.add_argument("--out", type=Path, help="output directory (default: the config's output field)")
    run.add_argument("--jobs", type=int, default=1, help="cap on worker threads for independent directions")
    run.add_argument("--allow-short-horizon", action="store_true", help="downgrade the horizon bound to a warning")

    val = sub.add_parser("validate", help="check a config and print derived quantities")
    val.add_argument("--config", required=True, type=Path)
    val.add_argument("--allow-short-horizon", action="store_true")

    cmp_ = sub.add_parser("compare", help="diff two runs (directories or manifest files)")
    cmp_.add_argument("a", type=Path)
    cmp_.add_argument("b", type=Path)
    cmp_.add_argument("--out", type=Path, help="also write compare.txt and compare.json here")
    return p


def _run(args):
    if args.jobs < 1:
        raise ConfigError(f"--jobs must be at least 1, got {args.jobs}")
    cfg = load_config(args.config)
    outcome = run_experiment(cfg, args.out, jobs=args.jobs, allow_short_horizon=args.allow_short_horizon)
    print(outcome.report.to_text(), end="")
    print(f"manifest: {outcome.manifest}")
    return outcome.exit_code


def _validate(args):
    cfg = load_config(args.config)
    report = cfg.validate(args.allow_short_horizon)
    print(report.to_text(), end="")
    return EXIT_OK if report.ok else EXIT_ERROR


def _compare(args):
    comp = compare_runs(args.a, args.b)
    text = comp.to_text()
    print(text, end="")
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "compare.txt").write_text(text)
        io.write_json(args.out / "compare.json", comp.as_dict())
    return EXIT_OK


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    verbs = {"run": _run, "validate": _validate, "compare": _compare}
    try:
        return verbs[args.verb](args)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except Exception as exc:  # any failure inside a pipeline is an execution error
        log.debug("traceback", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
