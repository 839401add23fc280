"""Command-line front end.

Exit codes: 0 success, 1 configuration error, 2 solver nonconvergence.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import experiments
from .all_at_once import InnerSolveError
from .config import ConfigError, build_config, load_config_file
from .lcp_core import PolicyIterationError
from .preconditioners import write_spectrum
from .reports import emit_report

EXIT_OK, EXIT_CONFIG, EXIT_NONCONVERGENCE = 0, 1, 2

_FLAG_KEYS = {
    "model": "model", "ns": "ns", "nv": "nv", "nt": "nt", "alpha": "alpha",
    "method": "method", "psi": "psi", "tol1": "tol1", "tol2": "tol2",
    "workers": "workers", "out": "out", "format": "format",
    "preconditioner": "preconditioner", "sigma": "sigma", "max_iter": "max_iter",
}


def _ints(text: str) -> list[int]:
    try:
        return [int(x) for x in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected integers, got {text!r}") from None


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--example", type=int, choices=(1, 2, 3),
                        help="start from a preset problem")
    common.add_argument("--config", help="flat key = value file; flags override it")
    common.add_argument("--model", choices=("bs1d", "spread2d", "heston2d"))
    common.add_argument("--ns", type=int)
    common.add_argument("--nv", type=int)
    common.add_argument("--nt", type=_ints, help="one or more N_t values, e.g. 20,40,80")
    common.add_argument("--alpha", type=float)
    common.add_argument("--method", choices=("sequential", "pint", "direct"))
    common.add_argument("--preconditioner", choices=("auto", "nkpa", "projected"))
    common.add_argument("--psi", choices=("average", "rounded", "mode"))
    common.add_argument("--tol1", type=float)
    common.add_argument("--tol2", type=float)
    common.add_argument("--sigma", type=float)
    common.add_argument("--max-iter", dest="max_iter", type=int)
    common.add_argument("--workers", type=int)
    common.add_argument("--out", help="output file (stdout when omitted)")
    common.add_argument("--format", choices=("csv", "markdown", "json"))
    common.add_argument("--no-timings", action="store_true",
                        help="leave wall_seconds empty in CSV output")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="pint-american",
                                     description="American option pricing with all-at-once "
                                                 "policy iteration.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("price", parents=[common], help="price one configuration")
    sub.add_parser("convergence", parents=[common], help="temporal convergence table")
    t2 = sub.add_parser("table2", parents=[common], help="iteration matrix over N_t x N_s")
    t2.add_argument("--ns-list", type=_ints, default=[20, 40, 80, 160, 320])
    t2.add_argument("--nt-list", type=_ints, default=[20, 40, 80, 160, 320])
    sw = sub.add_parser("sweep-sigma", parents=[common], help="volatility sweep")
    sw.add_argument("--sigmas", type=_floats, default=[0.1, 0.25, 0.5, 1.0])
    sp = sub.add_parser("spectrum", parents=[common], help="dump eigenvalues")
    sp.add_argument("--iteration", type=int, default=0,
                    help="outer policy step whose mask is analysed")
    return parser


def _config_from_args(args):
    file_values = load_config_file(args.config) if args.config else {}
    overrides = {key: getattr(args, attr) for attr, key in _FLAG_KEYS.items()}
    example = args.example
    if example is None and not file_values.get("model") and not args.model:
        example = 1
    return build_config(example, file_values, overrides)


def _write(text: str, out):
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _run(args, config) -> int:
    timings = not args.no_timings
    if args.command == "price":
        reports = experiments.run_config(config)
        _write(emit_report(reports, config.format, timings=timings), config.out)
    elif args.command == "convergence":
        table = experiments.convergence_sweep(config)
        text = emit_report(table.reports, config.format, timings=timings)
        orders = ", ".join("-" if o is None else f"{o:.3f}" for o in table.orders)
        _write(text, config.out)
        sys.stderr.write(f"observed temporal order: {orders}\n")
    elif args.command == "table2":
        cells = experiments.iteration_matrix(config, args.ns_list, args.nt_list)
        _write(experiments.iteration_matrix_csv(cells), config.out)
    elif args.command == "sweep-sigma":
        reports = experiments.sigma_sweep(config, args.sigmas)
        _write(emit_report(reports, config.format, timings=timings), config.out)
    elif args.command == "spectrum":
        eigs = experiments.spectrum(config, config.nt[0], args.iteration)
        stem = Path(config.out or "spectrum")
        for name, values in eigs.items():
            path = stem.with_name(f"{stem.stem}_{name}.txt")
            write_spectrum(path, values)
            sys.stderr.write(f"wrote {len(values)} eigenvalues to {path}\n")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = _config_from_args(args)
    except ConfigError as exc:
        sys.stderr.write(f"configuration error: {exc}\n")
        return EXIT_CONFIG
    try:
        return _run(args, config)
    except ConfigError as exc:
        sys.stderr.write(f"configuration error: {exc}\n")
        return EXIT_CONFIG
    except (PolicyIterationError, InnerSolveError) as exc:
        sys.stderr.write(f"solver did not converge: {exc}\n")
        return EXIT_NONCONVERGENCE


if __name__ == "__main__":
    sys.exit(main())
