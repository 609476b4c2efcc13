"""Command-line entry point.

    relstat [options] series1.csv [series2.csv ...]
    relstat synth --kernel "SE + WN" --params 1,1.5,0.1

Exit codes: 0 success, 2 bad configuration or input, 3 numerical failure,
4 file-system error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .gp import SingularCovarianceError
from .optimize import OptimizationError
from .report import RunConfig, export_plot_data, run_search
from .search import SearchFailed
from .synth import synth_experiment
from .text import KernelSyntaxError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4

log = logging.getLogger("relstat")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _search_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="relstat", description="Greedy GP kernel search over one or more time series.")
    p.add_argument("inputs", nargs="+", help="CSV files with columns t,y")
    p.add_argument("--mode", choices=("ckl", "rkl", "srkl"), default="ckl")
    p.add_argument("--depth", type=int, default=2, help="maximum search depth")
    p.add_argument("--holdout", type=int, default=13, help="points withheld from the end of each series")
    p.add_argument("--sm-components", type=int, default=3, help="spectral mixture components (srkl)")
    p.add_argument("--restarts", type=int, default=3)
    p.add_argument("--max-iter", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jitter-base", type=float, default=1e-8)
    p.add_argument("--normalize-inputs", action="store_true", help="map t affinely onto [0, 1]")
    p.add_argument("--out", default="relstat_out", help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _synth_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="relstat synth", description="Hyperparameter recovery versus number of series.")
    p.add_argument("--kernel", required=True, help='kernel expression, e.g. "SE + WN"')
    p.add_argument("--params", required=True, help="comma-separated natural parameter values")
    p.add_argument("--m-max", type=int, default=20)
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--n-points", type=int, default=40)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="write the table as JSON here instead of stdout")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _run_synth(argv) -> int:
    args = _synth_parser().parse_args(argv)
    _logging(args.verbose)
    try:
        params = [float(v) for v in args.params.split(",")]
        table = synth_experiment(args.kernel, params, m_max=args.m_max, trials=args.trials,
                                 seed=args.seed, n_points=args.n_points)
    except (KernelSyntaxError, ValueError) as err:
        print(f"relstat synth: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (SingularCovarianceError, OptimizationError) as err:
        print(f"relstat synth: numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    text = json.dumps(table.to_dict(), indent=1) + "\n"
    if args.out is None:
        sys.stdout.write(text)
        return EXIT_OK
    try:
        Path(args.out).write_text(text, encoding="utf-8")
    except OSError as err:
        print(f"relstat synth: {err}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


def _logging(verbose: bool):
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(message)s")


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    if argv and argv[0] == "synth":
        return _run_synth(argv[1:])
    args = _search_parser().parse_args(argv)
    _logging(args.verbose)
    try:
        config = RunConfig(
            inputs=tuple(args.inputs), mode=args.mode, depth=args.depth, sm_components=args.sm_components,
            holdout=args.holdout, restarts=args.restarts, max_iter=args.max_iter, seed=args.seed,
            jitter_base=args.jitter_base, normalize_inputs=args.normalize_inputs, out=args.out,
        )
    except ValueError as err:
        print(f"relstat: {err}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        report = run_search(config)
    except FileNotFoundError as err:
        print(f"relstat: {err}", file=sys.stderr)
        return EXIT_IO
    except (SearchFailed, SingularCovarianceError, OptimizationError) as err:
        print(f"relstat: numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as err:
        print(f"relstat: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as err:
        print(f"relstat: {err}", file=sys.stderr)
        return EXIT_IO
    try:
        out = Path(config.out)
        out.mkdir(parents=True, exist_ok=True)
        report.write(out / "report.json")
        export_plot_data(report, out / "plots")
    except OSError as err:
        print(f"relstat: cannot write output: {err}", file=sys.stderr)
        return EXIT_IO
    best = report.best if isinstance(report.best, str) else "; ".join(report.best)
    print(f"best: {best}  BIC {report.bic:.3f}  ->  {out / 'report.json'}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
