"""Command line entry point: ``starsr run | sweep | report``.

Exit codes: 0 success, 2 usage error, 3 infeasible, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .baselines import SCHEMES, SchemeTag
from .engine import INFEASIBLE
from .experiment import SWEEP_PARAMS, WORKERS_ENV, SweepSpec, read_config, report, run, sweep
from .model import MODELS

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INFEASIBLE = 3
EXIT_NUMERICAL = 4


class UsageError(Exception):
    pass


def _number_list(text: str, kind=float) -> list:
    try:
        return [kind(x) for x in text.replace(",", " ").split()]
    except ValueError:
        raise UsageError(f"cannot parse list {text!r}") from None


def _seed_list(text: str) -> list[int]:
    """``1,2,5`` or a range ``1-20``."""
    text = text.strip()
    if "-" in text and "," not in text and " " not in text:
        lo, _, hi = text.partition("-")
        try:
            lo_i, hi_i = int(lo), int(hi)
        except ValueError:
            raise UsageError(f"cannot parse seed range {text!r}") from None
        if hi_i < lo_i:
            raise UsageError(f"empty seed range {text!r}")
        return list(range(lo_i, hi_i + 1))
    return _number_list(text, int)


def _scheme(text: str) -> str:
    try:
        return SchemeTag.parse(text).value
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="starsr",
        description="Transmit power minimization for a symbiotic radio with a STAR surface.",
        epilog=f"Set {WORKERS_ENV} to run sweep points in parallel processes.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log solver progress")
    sub = parser.add_subparsers(dest="verb", required=True)

    def common(p):
        p.add_argument("--config", help="scenario file (default: the shipped default config)")
        p.add_argument("--model", default="broadcast", help=f"one of {', '.join(MODELS)}")
        p.add_argument("--out", default=".", help="output directory")

    p_run = sub.add_parser("run", help="solve one seeded instance")
    common(p_run)
    p_run.add_argument("--scheme", default="proposed", help=f"one of {', '.join(SCHEMES)}")
    p_run.add_argument("--seed", type=int, default=None, help="channel seed (default: config seed)")

    p_sweep = sub.add_parser("sweep", help="sweep one parameter over seeds and schemes")
    common(p_sweep)
    p_sweep.add_argument("--scheme", default="proposed",
                         help="comma separated schemes, or 'all'")
    p_sweep.add_argument("--param", required=True, help=f"one of {', '.join(SWEEP_PARAMS)}")
    p_sweep.add_argument("--values", required=True, help="comma separated parameter values")
    p_sweep.add_argument("--seeds", default="1-20", help="comma separated seeds or a range a-b")

    p_report = sub.add_parser("report", help="summarize a sweep.csv")
    p_report.add_argument("sweep_csv", help="path of a sweep.csv file")
    p_report.add_argument("--out", default=None, help="also write summary.csv here")
    return parser


def _exit_code(record) -> int:
    if record.feasible:
        return EXIT_OK
    return EXIT_INFEASIBLE if record.status == INFEASIBLE else EXIT_NUMERICAL


def _check_model(model: str) -> None:
    if model not in MODELS:
        raise UsageError(f"unknown model {model!r}; valid: {', '.join(MODELS)}")


def _load(path):
    try:
        return read_config(path)
    except KeyError as exc:
        raise UsageError(f"unknown config key {exc.args[0]!r}") from None
    except (ValueError, OSError) as exc:
        raise UsageError(f"bad config: {exc}") from None


def cmd_run(args) -> int:
    _check_model(args.model)
    scheme = _scheme(args.scheme)
    cfg = _load(args.config)
    seed = cfg.seed if args.seed is None else args.seed
    record, _ = run(None, args.model, scheme, seed, args.out, cfg=cfg)
    print(f"{record.model} {record.scheme} seed={record.seed} status={record.status} "
          f"power={record.power_dbm:.4f} dBm feasible={int(record.feasible)} "
          f"inner={record.inner} time={record.wall_time:.2f}s")
    return _exit_code(record)


def cmd_sweep(args) -> int:
    _check_model(args.model)
    schemes = list(SCHEMES) if args.scheme == "all" else [
        _scheme(s) for s in args.scheme.split(",") if s.strip()]
    cfg = _load(args.config)
    if args.param not in SWEEP_PARAMS:
        raise UsageError(f"unknown sweep parameter {args.param!r}; valid: {', '.join(SWEEP_PARAMS)}")
    try:
        spec = SweepSpec(args.param, _number_list(args.values), args.model, schemes,
                         _seed_list(args.seeds), args.out)
        path, records = sweep(spec, cfg=cfg)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    failed = sum(not r.feasible for r in records)
    print(f"wrote {path} ({len(records)} runs, {failed} without a feasible solution)")
    return EXIT_OK


def cmd_report(args) -> int:
    path = Path(args.sweep_csv)
    if not path.is_file():
        raise UsageError(f"no such file {str(path)!r}")
    summary = report(path)
    sys.stdout.write(summary.to_text())
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "summary.csv").write_text(summary.to_csv())
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handlers = {"run": cmd_run, "sweep": cmd_sweep, "report": cmd_report}
    try:
        return handlers[args.verb](args)
    except UsageError as exc:
        print(f"starsr: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
