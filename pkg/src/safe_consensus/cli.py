"""Command-line front end: ``run`` a scenario or ``verify`` a property suite."""
from __future__ import annotations

import argparse
import logging
import sys
import time

from . import __version__
from .scenario import ScenarioError, load_scenario

EXIT_OK = 0
EXIT_PARSE = 1
EXIT_ABORTED = 2
EXIT_VERIFY = 3


class _Parser(argparse.ArgumentParser):
    # usage errors share the parse-failure code; 2 is reserved for aborted runs
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_PARSE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="safe-consensus", description=__doc__)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("run", help="simulate a scenario and write CSV, summary and plots")
    r.add_argument("scenario", help="scenario YAML file or name of a bundled scenario")
    r.add_argument("--out", default="out", help="output directory (default: %(default)s)")
    r.add_argument("--t-end", type=float, help="override duration [s]")
    r.add_argument("--dt", type=float, help="override Euler step [s]")
    r.add_argument("--alpha", type=float, help="override every follower's speedup factor")
    r.add_argument("--no-safety", action="store_true", help="disable the barrier filter")
    r.add_argument("--workers", type=int, default=None, help="threads for per-follower prediction")

    from .verify import SUITES

    v = sub.add_parser("verify", help="run a seeded property suite")
    v.add_argument("suite", choices=sorted(SUITES))
    return p


def cmd_run(args) -> int:
    try:
        sc = load_scenario(args.scenario)
        sc = sc.with_overrides(t_end=args.t_end, dt=args.dt, alpha=args.alpha,
                               safety=False if args.no_safety else None)
    except ScenarioError as exc:
        print(f"error: scenario {args.scenario}: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (OSError, ValueError) as exc:
        print(f"error: scenario {args.scenario}: {exc}", file=sys.stderr)
        return EXIT_PARSE

    from .report import write_outputs
    from .sim import run

    t0 = time.perf_counter()
    log = run(sc, workers=args.workers)
    out = write_outputs(log, sc, args.out)
    logging.getLogger(__name__).info("%d steps in %.1f s", len(log.records), time.perf_counter() - t0)
    if not log.completed:
        print(f"aborted: {log.status} at step {log.failed_step}: {log.message}", file=sys.stderr)
        return EXIT_ABORTED
    print((out / "summary.txt").read_text(encoding="utf-8"), end="")
    return EXIT_OK


def cmd_verify(args) -> int:
    from .verify import SUITES

    checks = SUITES[args.suite]()
    for c in checks:
        print(c.line())
    return EXIT_OK if all(c.passed for c in checks) else EXIT_VERIFY


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "run":
        return cmd_run(args)
    return cmd_verify(args)


if __name__ == "__main__":
    sys.exit(main())
