"""Command-line entry point: ``fkspde <subcommand> --spec FILE [options]``.

Exit codes: 0 ok, 2 validation or parse error, 3 runtime error, 4 failed
check (``--check``) or failed acceptance criterion.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .errors import FKError, ValidationError

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME, EXIT_CHECK = 0, 2, 3, 4

log = logging.getLogger("fkspde")


def _common(p: argparse.ArgumentParser, spec_required: bool = True) -> None:
    p.add_argument("--spec", required=spec_required, help="problem file (TOML) or bundled spec name")
    p.add_argument("--seed", type=int, help="master seed (default: [budgets] seed)")
    p.add_argument("--paths", type=int, help="path / batch / sample budget override")
    p.add_argument("--steps", type=int, help="time-step budget override")
    p.add_argument("--workers", type=int, help="worker threads (default: available CPUs)")
    p.add_argument("--out", default=".", help="output directory, or '-' for stdout")
    p.add_argument("--format", choices=("csv", "json"), default="json")
    p.add_argument("--check", action="store_true", help="exit 4 if any verdict fails")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    from .commands import SUBCOMMANDS

    ap = argparse.ArgumentParser(prog="fkspde", description="Feynman-Kac Monte Carlo for SPDEs with fractional noise")
    ap.add_argument("--version", action="version", version=f"fkspde {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        _common(p)
        if name == "smallball":
            p.add_argument("--eps", type=float, nargs="+", help="ball radii")
            p.add_argument("--t", type=float, nargs="+", help="times")
    p = sub.add_parser("acceptance", help="run the acceptance criteria at the bundled budgets")
    _common(p, spec_required=False)
    p.add_argument("--criteria", nargs="+", help="criterion ids (default: all)")
    p.add_argument("--scale", type=float, default=1.0, help="budget multiplier")
    p.add_argument("--list", action="store_true", help="list criterion ids and exit")
    return ap


def _write(out: str, name: str, text: str) -> None:
    if out == "-":
        sys.stdout.write(text)
        return
    d = Path(out)
    d.mkdir(parents=True, exist_ok=True)
    if not os.access(d, os.W_OK):
        raise ValidationError(f"output directory {d} is not writable")
    (d / name).write_text(text)
    log.info("wrote %s", d / name)


def _run_command(args) -> int:
    from .commands import RUNNERS, Budgets, provenance, render, render_verdicts
    from .config import load_spec

    ls = load_spec(args.spec)
    b = Budgets.resolve(ls, args.command, args.paths, args.steps, args.seed, args.workers)
    log.info("command=%s spec=%s paths=%d steps=%d seed=%d workers=%d", args.command, ls.problem.name, b.paths,
             b.steps, b.seed, b.workers)
    if args.command == "smallball":
        res = RUNNERS["smallball"](ls, b, eps=args.eps, times=args.t)
    else:
        res = RUNNERS[args.command](ls, b)
    header = provenance(ls, res, b)
    _write(args.out, f"{args.command}.{args.format}", render(res, header, args.format))
    if args.format == "csv" and res.verdicts and args.out != "-":
        _write(args.out, f"{args.command}-verdicts.json", render_verdicts(res, header))
    for v in res.verdicts:
        log.info("verdict name=%r pass=%s theory=%s fitted=%s", v["name"], v["pass"], v["theory"], v["fitted"])
    if args.check and not res.ok:
        log.error("check failed")
        return EXIT_CHECK
    return EXIT_OK


def _run_acceptance(args) -> int:
    from .acceptance import CRITERIA, FAIL, report_json, run_suite

    if args.list:
        from .acceptance import load_manifest

        m = load_manifest()
        for cid in CRITERIA:
            print(f"{cid}\t{m['c' + cid]['title']}")
        return EXIT_OK
    results = run_suite(args.criteria, args.scale, args.workers or 1, log=lambda s: print(s, file=sys.stderr))
    _write(args.out, "acceptance.json", report_json(results, args.scale))
    return EXIT_CHECK if any(r.status == FAIL for r in results) else EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(stream=sys.stderr, level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="fkspde level=%(levelname)s %(message)s")
    try:
        if args.command == "acceptance":
            return _run_acceptance(args)
        return _run_command(args)
    except ValidationError as exc:
        print(f"fkspde: validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (FKError, OSError) as exc:
        print(f"fkspde: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
