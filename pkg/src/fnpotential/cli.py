"""Command line: ``fnpotential run|list|norms``.

Exit codes: 0 all audits reached their verdict, 1 some audit failed,
2 parse or argument error, 3 solver non-convergence, 4 resolution or
domain error.
"""
from __future__ import annotations

import argparse
import logging
import math
import sys

from .errors import (
    ArgumentError,
    ConvergenceError,
    DomainError,
    FnPotentialError,
    InputError,
    ParseError,
    ResolutionError,
    SchemeError,
)
from .grid import GridField
from .scenarios import builtin_descriptions, dumps, parse_scenario, read_document, run_scenario
from .spaces import NormReport, lorentz_functional, marcinkiewicz_functional, morrey_functional, oscillation_modulus

log = logging.getLogger("fnpotential")

EXIT_FAIL, EXIT_PARSE, EXIT_CONVERGENCE, EXIT_RESOLUTION = 1, 2, 3, 4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_PARSE, f"{self.prog}: error: {message}\n")


def _grids(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad grid list {text!r}") from None


def build_parser():
    p = _Parser(prog="fnpotential", description="Gradient potential estimates for fully nonlinear elliptic problems.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("run", help="run a scenario file or built-in scenario")
    r.add_argument("scenario", help="scenario file (.json/.yaml) or built-in name")
    r.add_argument("--grids", type=_grids, help="override the grid ladder, e.g. 64,128,256")
    r.add_argument("--jobs", type=int, default=1, help="parallel audit jobs")
    r.add_argument("--out", help="output directory")

    sub.add_parser("list", help="list built-in scenarios")

    n = sub.add_parser("norms", help="evaluate a function-space functional of a saved field")
    n.add_argument("field", help="field file (.bin with .json sidecar, or .csv)")
    n.add_argument("--space", required=True, help="lorentz:q,gamma | marcinkiewicz:q | morrey:q,s | bmo:R")
    n.add_argument("--json", dest="json_out", help="also write the report here")
    return p


def parse_space(text):
    """'lorentz:2,1' -> ('lorentz', [2.0, 1.0]) with arity checks."""
    arity = {"lorentz": 2, "marcinkiewicz": 1, "morrey": 2, "bmo": 1}
    name, _, args = text.partition(":")
    if name not in arity:
        raise ArgumentError(f"unknown space {name!r}; expected one of {sorted(arity)}")
    try:
        vals = [float(v) for v in args.split(",")] if args else []
    except ValueError:
        raise ArgumentError(f"bad numbers in {text!r}") from None
    if len(vals) != arity[name] or not all(math.isfinite(v) or v == math.inf for v in vals):
        raise ArgumentError(f"{name} takes {arity[name]} parameter(s), got {args!r}")
    return name, vals


def compute_norm(field: GridField, name, vals) -> NormReport:
    if name == "lorentz":
        q, gamma = vals
        if gamma == math.inf:
            return marcinkiewicz_functional(field, q)
        return lorentz_functional(field, q, gamma)
    if name == "marcinkiewicz":
        return marcinkiewicz_functional(field, vals[0])
    if name == "morrey":
        return morrey_functional(field, vals[0], vals[1])
    R = vals[0]
    (_, value), = oscillation_modulus(field, [R])
    return NormReport("bmo", {"R": R}, value, probe_config={"stride": 4, "ladder": "2h*2^k"})


def _load_field(path):
    if path.endswith(".csv"):
        return GridField.from_csv(path)
    return GridField.load(path)


def cmd_list(args):
    for name, desc in builtin_descriptions():
        print(f"{name:28s} {desc}")
    return 0


def cmd_norms(args):
    name, vals = parse_space(args.space)
    field = _load_field(args.field)
    rep = compute_norm(field, name, vals)
    text = rep.to_json()
    print(text)
    if args.json_out:
        with open(args.json_out, "w") as fh:
            fh.write(text)
    return 0


def cmd_run(args):
    doc = read_document(args.scenario)
    sc = parse_scenario(doc, grids=args.grids, output=args.out)
    if args.jobs < 1:
        raise ArgumentError("--jobs must be at least 1")
    outcome = run_scenario(sc, jobs=args.jobs, log=log.info)
    print(dumps({"scenario": outcome.scenario, "out": outcome.out, "verdicts": outcome.verdicts}))
    return 0 if outcome.ok else EXIT_FAIL


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    handler = {"run": cmd_run, "list": cmd_list, "norms": cmd_norms}[args.command]
    try:
        return handler(args)
    except ConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except (ResolutionError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RESOLUTION
    except (ParseError, ArgumentError, InputError, SchemeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except FnPotentialError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
