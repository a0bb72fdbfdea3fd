"""``dlnk <subcommand> --config <path> [--seed] [--threads] [--out] [--oracle]``.

Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure,
5 failed acceptance check in ``verify``. Errors are written to stderr as a
single JSON line.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from . import __version__
from .commands import COMMANDS
from .config import MAX_U64, load_config
from .errors import DiagnosticFailure, DlnkError, ParseError, RankDeficientDesign
from .report import Execution, Provenance, Report, payload_bytes, plain, to_json
from .rng import DEFAULT_CHUNK, get_threads, set_threads


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _u64(text):
    value = int(text)
    if not 0 <= value <= MAX_U64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _positive(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dlnk", description="Exact inference for finite-width deep linear networks.")
    parser.add_argument("--version", action="version", version=f"dlnk {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    helps = {
        "sample-prior": "compare the Wishart-mixture and weight-space prior samplers",
        "predict": "posterior predictive mean and covariance at test inputs",
        "evidence": "Bayesian evidence at finite and zero temperature",
        "ldp": "rate-function minimizers and concentration table",
        "verify": "run the acceptance suite and print a pass/fail table",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", required=True, type=Path)
        p.add_argument("--seed", type=_u64)
        p.add_argument("--threads", type=_positive)
        p.add_argument("--out", type=Path)
        p.add_argument("--oracle", action="store_true",
                       help="predict: also run the brute-force weight-space posterior")
    return parser


def _error_line(exc) -> str:
    if isinstance(exc, DlnkError):
        doc = {"error": type(exc).__name__, "message": str(exc), "exit_code": exc.exit_code, "hint": exc.hint}
        if isinstance(exc, ParseError):
            doc.update(path=str(exc.path) if exc.path else None, line=exc.line, column=exc.column)
        if isinstance(exc, RankDeficientDesign):
            doc["smallest_eigenvalue"] = exc.smallest_eigenvalue
        ess = getattr(exc, "ess", None)
        if ess is not None:
            doc["ess"] = ess
    else:
        doc = {"error": "UsageError", "message": str(exc), "exit_code": 2, "hint": "see dlnk --help"}
    return json.dumps(plain(doc))


def run(argv=None, emit: bool = True):
    """Run one command; returns (exit code, payload bytes or None).

    With ``emit`` false nothing is printed or written except the report file
    requested by ``--out``.
    """
    previous_threads = get_threads()
    try:
        args = build_parser().parse_args(argv)
        overrides = {}
        if args.seed is not None:
            overrides["run.seed"] = args.seed
        if args.threads is not None:
            overrides["run.threads"] = args.threads
        if args.out is not None:
            overrides["run.out"] = str(args.out)
        cfg = load_config(args.config, overrides)
        set_threads(cfg.run.threads)
        start = time.perf_counter()
        out = COMMANDS[args.command](cfg, oracle=args.oracle)
        results, diagnostics = out[0], out[1]
        timings = out[2] if len(out) > 2 else {}
        report = Report(
            command=args.command,
            config=cfg.echo(),
            results=plain(results),
            diagnostics=plain(diagnostics),
            provenance=Provenance(package_version=__version__, seed=cfg.run.seed, chunk_size=DEFAULT_CHUNK),
            execution=Execution(wall_clock_seconds=time.perf_counter() - start, threads=cfg.run.threads,
                                timings=timings),
        )
        text = to_json(report)
        if cfg.run.out:
            Path(cfg.run.out).write_text(text)
        if emit:
            if args.command == "verify":
                _print_table(results, timings, diagnostics)
            elif not cfg.run.out:
                sys.stdout.write(text)
        if args.command == "verify" and not _verify_ok(results, timings, diagnostics):
            raise DiagnosticFailure("one or more acceptance criteria failed")
        return 0, payload_bytes(report)
    except (DlnkError, _UsageError) as exc:
        if emit:
            print(_error_line(exc), file=sys.stderr)
        code = exc.exit_code if isinstance(exc, DlnkError) else 2
        return code, None
    finally:
        set_threads(previous_threads)


def _verify_ok(results, timings, diagnostics) -> bool:
    limits = diagnostics.get("runtime_limits", {})
    in_budget = all(timings.get(k, 0.0) <= v for k, v in limits.items())
    return bool(results["all_passed"]) and in_budget


def _print_table(results, timings, diagnostics):
    limits = diagnostics.get("runtime_limits", {})
    for row in results["criteria"]:
        key = str(row["number"])
        runtime = timings.get(key, 0.0)
        limit = limits.get(key)
        ok = row["passed"] and (limit is None or runtime <= limit)
        budget = f" (limit {limit:.0f}s)" if limit else ""
        print(f"[{'PASS' if ok else 'FAIL'}] {row['number']}. {row['title']}: "
              f"{row['details'].get('summary', '')}; {runtime:.1f}s{budget}")


def main(argv=None) -> int:
    code, _ = run(argv)
    return code


if __name__ == "__main__":
    sys.exit(main())
