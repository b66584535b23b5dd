"""Command-line entry point: simulate, fit, bench, state save/resume.

Every long option can also be set through an environment variable named
ONLINEHUBER_<OPTION> (upper case, dashes as underscores); explicit flags win.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .bench import ExperimentSpec, emit_results, figure_series, run_experiment
from .errors import HuberStreamError, InvalidInputError, NumericalError
from .huber import HuberConfig
from .ingest import StreamSchema, fit_csv
from .simgen import SimSpec, write_stream_csv
from .streaming import finalize, load_state, save_state

ENV_PREFIX = "ONLINEHUBER_"
EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4

log = logging.getLogger("onlinehuber")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _add_fit_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--input", required=True, help="CSV file with a header row")
    p.add_argument("--schema", required=True, help="schema JSON describing response and predictors")
    p.add_argument("--batch-size", type=int, default=1000)
    p.add_argument("--k", type=float, default=1.345, help="Huber tuning constant")
    p.add_argument("--k-mode", choices=("scaled", "fixed"), default="scaled")
    p.add_argument("--max-iter", type=int, default=1000)
    p.add_argument("--rel-tol", type=float, default=1e-8)
    p.add_argument("--strict", action="store_true", help="fail on malformed rows")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="onlinehuber", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="materialize a simulation spec as CSV")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("fit", help="fit a regression on a CSV file")
    _add_fit_options(p)
    p.add_argument("--estimator", choices=("uhr", "rls", "ols", "ohr", "dchr"), default="uhr")
    p.add_argument("--report", required=True, help="output JSON report")
    p.add_argument("--bootstrap", type=int, default=None, metavar="B")
    p.add_argument("--seed", type=int, default=0)
    split = p.add_mutually_exclusive_group()
    split.add_argument("--test-split", type=float, default=None, metavar="FRAC")
    split.add_argument("--test-file", default=None)

    p = sub.add_parser("bench", help="run a simulation experiment")
    p.add_argument("--spec", required=True, help="experiment JSON")
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=("csv", "json", "markdown"), default="csv")
    p.add_argument("--layout", choices=("long", "table"), default="long")
    p.add_argument("--raw-units", action="store_true", help="do not rescale mse/mae")
    p.add_argument("--series", default=None, help="also write long-format figure data here")
    p.add_argument("--series-x", choices=("b", "N_b"), default="b")
    p.add_argument("--series-y", choices=("mse", "mae", "time"), default="mse")

    p = sub.add_parser("state", help="persist or continue an updating-state stream")
    ssub = p.add_subparsers(dest="action", required=True, parser_class=_Parser)
    s = ssub.add_parser("save", help="ingest (part of) a file and write a snapshot")
    _add_fit_options(s)
    s.add_argument("--snapshot", required=True)
    s.add_argument("--skip-rows", type=int, default=0)
    s.add_argument("--max-rows", type=int, default=None)
    s = ssub.add_parser("resume", help="continue from a snapshot and report the fit")
    _add_fit_options(s)
    s.add_argument("--snapshot", required=True)
    s.add_argument("--skip-rows", type=int, default=0)
    s.add_argument("--max-rows", type=int, default=None)
    s.add_argument("--report", default=None)
    s.add_argument("--save", default=None, help="write the updated snapshot here")
    _apply_env_defaults(ap)
    return ap


def _apply_env_defaults(parser: argparse.ArgumentParser) -> None:
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            for child in action.choices.values():
                _apply_env_defaults(child)
            continue
        longs = [o for o in action.option_strings if o.startswith("--")]
        if not longs or action.dest in ("help",):
            continue
        env = ENV_PREFIX + longs[0][2:].upper().replace("-", "_")
        if env in os.environ:
            raw = os.environ[env]
            if isinstance(action, argparse._StoreTrueAction):
                action.default = raw.lower() in ("1", "true", "yes")
            else:
                action.default = action.type(raw) if action.type else raw
            action.required = False


def _huber_cfg(args) -> HuberConfig:
    return HuberConfig(k=args.k, k_mode=args.k_mode, max_iter=args.max_iter, rel_tol=args.rel_tol)


def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2) + "\n")


def cmd_simulate(args) -> None:
    spec = SimSpec.load(args.spec)
    n = write_stream_csv(spec, args.out)
    log.info("wrote %d rows to %s", n, args.out)


def cmd_fit(args) -> None:
    schema = StreamSchema.load(args.schema)
    report, _ = fit_csv(args.input, schema, args.estimator, args.batch_size, _huber_cfg(args),
                        bootstrap=args.bootstrap, seed=args.seed, test_split=args.test_split,
                        test_file=args.test_file, strict=args.strict)
    _write_json(args.report, report.to_dict())
    print(json.dumps({"coef": dict(zip(report.names, report.coef.tolist()))}))


def cmd_bench(args) -> None:
    spec = ExperimentSpec.load(args.spec)
    rows = run_experiment(spec, progress=lambda m: log.info(m))
    Path(args.out).write_text(emit_results(rows, args.format, layout=args.layout,
                                           report_units=not args.raw_units, spec=spec))
    if args.series:
        Path(args.series).write_text(figure_series(rows, args.series_x, args.series_y,
                                                   report_units=not args.raw_units))


def cmd_state(args) -> None:
    schema = StreamSchema.load(args.schema)
    cfg = _huber_cfg(args)
    if args.action == "save":
        initial = None
    else:
        initial = load_state(args.snapshot)
        if initial.p != schema.p:
            raise InvalidInputError(f"snapshot has p={initial.p}, schema has p={schema.p}")
    report, state = fit_csv(args.input, schema, "uhr", args.batch_size, cfg,
                            skip_rows=args.skip_rows, max_rows=args.max_rows,
                            initial_state=initial, strict=args.strict)
    if args.action == "save":
        save_state(state, args.snapshot)
        return
    if args.save:
        save_state(state, args.save)
    if args.report:
        _write_json(args.report, report.to_dict())
    print(json.dumps({"coef": dict(zip(report.names, finalize(state).tolist()))}))


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "bench": cmd_bench, "state": cmd_state}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (InvalidInputError, json.JSONDecodeError, KeyError, TypeError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except HuberStreamError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
