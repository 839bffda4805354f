"""``homoglab`` command line: ``run``, ``presets`` and ``verify``."""
from __future__ import annotations

import argparse
import json
import sys

from .errors import ConfigError, HomoglabError

EXIT_PASS, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="homoglab", description="Homogenisation experiment runner.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    r = sub.add_parser("run", help="run one experiment from a YAML config")
    r.add_argument("--config", required=True, help="path to the YAML config")
    r.add_argument("--out", help="output directory (overrides the config)")
    r.add_argument("--seed", type=int, help="random seed (overrides the config)")
    sub.add_parser("presets", help="list coefficient, kernel, model and test-set presets")
    v = sub.add_parser("verify", help="run the acceptance suite")
    v.add_argument("--only", type=int, nargs="+", metavar="N", help="run only these criteria")
    return p


def _run(args) -> int:
    from .harness import run
    try:
        summary = run(args.config, out=args.out, seed=args.seed)
    except ConfigError as exc:
        print(f"homoglab: config error at {exc.field or '<root>'}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except HomoglabError as exc:
        print(f"homoglab: experiment failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL
    print(json.dumps(summary.to_dict(), indent=2, sort_keys=True))
    return summary.exit_code


def _verify(args) -> int:
    from .acceptance import CRITERIA, run_all
    known = {c[0] for c in CRITERIA}
    if args.only and not set(args.only) <= known:
        print(f"homoglab: unknown criteria {sorted(set(args.only) - known)}", file=sys.stderr)
        return EXIT_USAGE
    results = run_all(set(args.only) if args.only else None, echo=lambda s: print(s, flush=True))
    failed = [r.number for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} criteria passed"
          + (f"; failed: {failed}" if failed else ""))
    return EXIT_FAIL if failed else EXIT_PASS


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "presets":
        from .presets import format_catalog
        sys.stdout.write(format_catalog())
        return EXIT_PASS
    if args.command == "run":
        return _run(args)
    return _verify(args)


if __name__ == "__main__":
    sys.exit(main())
