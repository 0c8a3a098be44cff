"""
Command-line surface: fit, bound, curves and simulate.

Exit codes: 0 success, 1 unexpected error, 2 input parse error,
3 dimension mismatch, 4 invalid simulation scenario.
"""

import argparse
import json
import logging
import secrets
import sys
from typing import Any, Dict, List, Optional, Sequence

from pydantic import ValidationError

from app.config import CLI_METHODS, LOG_FORMATS, TEMPLATES, settings
from models.bounds import Method
from models.calibration import AnalysisOptions
from models.simulation import GrfConfig, ScenarioConfig
from services.analysis import AnalysisService
from services.simulation import run_simulation
from utils import csv_io
from utils.errors import PosthocError, ScenarioError
from utils.logger import setup_logging

logger = logging.getLogger(__name__)

CURVE_HEADER = ("k", "v_bar", "tp_lower", "fdp_upper")
SIM_HEADER = ("method", "rep", "violated", "lambda", "power_full", "power_bh", "power_p05")


def _dims(value: str):
    try:
        rows, cols = (int(part) for part in value.lower().split('x'))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected ROWSxCOLS, got '{value}'") from None
    return rows, cols


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--alpha", type=float, default=settings.alpha, help="JER level")
    parser.add_argument("--seed", type=int, default=None,
                        help="Seed for all randomness (default: OS entropy, echoed in the report)")
    parser.add_argument("--threads", type=int, default=settings.threads,
                        help="Cap on internal parallelism")
    parser.add_argument("--log-level", default=settings.log_level)
    parser.add_argument("--log-format", choices=LOG_FORMATS, default=settings.log_format)


def _add_data(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--design", required=True, help="n x p design matrix CSV")
    parser.add_argument("--response", required=True, help="n x m_pts response CSV")
    parser.add_argument("--contrasts", required=True, help="L x p contrast matrix CSV")
    parser.add_argument("--transpose", action="store_true",
                        help="Response is stored points x subjects")
    parser.add_argument("--method", choices=CLI_METHODS, default=settings.method)
    parser.add_argument("--bootstraps", type=int, default=None,
                        help=f"Bootstrap replicates B (default {settings.bootstraps})")
    parser.add_argument("--template", choices=TEMPLATES, default=settings.template)
    parser.add_argument("--K", dest="template_size", type=int, default=None,
                        help="Template size (default m)")
    parser.add_argument("--one-sided", action="store_true")
    parser.add_argument("--max-iterations", type=int, default=settings.max_iterations)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="posthoc-fdp",
        description="Post hoc false discovery proportion bounds for the mass-multivariate linear model"
    )
    commands = parser.add_subparsers(dest="command", required=True)

    fit = commands.add_parser("fit", help="Calibrate lambda and bound the requested sets")
    _add_common(fit)
    _add_data(fit)
    fit.add_argument("--subsets", help="One set per line: label,id-or-point-label,...")
    fit.add_argument("--bh-q", type=float, default=settings.bh_q)
    fit.add_argument("--select-p", type=float, default=None,
                     help="Volcano selection: p-value cutoff")
    fit.add_argument("--select-effect", type=float, default=None,
                     help="Volcano selection: minimum absolute contrast estimate")
    fit.add_argument("--k-max", type=int, default=None, help="Top-k curve length")
    fit.add_argument("--curves", help="Write the top-k curve CSV here (needs --k-max)")
    fit.add_argument("--output", help="JSON report path (default: stdout)")

    bound = commands.add_parser("bound", help="Bounds from a precomputed p-value CSV")
    _add_common(bound)
    bound.add_argument("--p-values", required=True,
                       help="One column of m p-values, or one row per contrast")
    bound.add_argument("--method", choices=("simes", "ari"), default="simes")
    bound.add_argument("--lambda", dest="lam", type=float, default=None,
                       help="Use this lambda instead of calibrating")
    bound.add_argument("--template", choices=TEMPLATES, default=settings.template)
    bound.add_argument("--K", dest="template_size", type=int, default=None)
    bound.add_argument("--subsets")
    bound.add_argument("--bh-q", type=float, default=settings.bh_q)
    bound.add_argument("--k-max", type=int, default=None)
    bound.add_argument("--curves")
    bound.add_argument("--output")

    curves = commands.add_parser("curves", help="Top-k TP / FDP curve CSV only")
    _add_common(curves)
    _add_data(curves)
    curves.add_argument("--k-max", type=int, default=None, help="Curve length (default m)")
    curves.add_argument("--output", required=True, help="Curve CSV path")

    simulate = commands.add_parser("simulate", help="Monte-Carlo JER and power study")
    _add_common(simulate)
    simulate.add_argument("--dim", type=_dims, default=(25, 25), help="Lattice, e.g. 25x25")
    simulate.add_argument("--fwhm", type=float, default=0.0)
    simulate.add_argument("--pi0", type=float, default=1.0)
    simulate.add_argument("--n", dest="n_subjects", type=int, default=50)
    simulate.add_argument("--reps", type=int, default=settings.sim_reps)
    simulate.add_argument("--bootstraps", type=int, default=settings.sim_bootstraps)
    simulate.add_argument("--method", dest="methods", action="append",
                          choices=CLI_METHODS, help="Repeat for several methods (default simes)")
    simulate.add_argument("--bh-q", type=float, default=settings.bh_q)
    simulate.add_argument("--max-iterations", type=int, default=settings.max_iterations)
    simulate.add_argument("--output", help="Summary JSON path (default: stdout)")
    simulate.add_argument("--csv", help="Per-repetition CSV path")
    return parser


def _emit_json(payload: Dict[str, Any], path: Optional[str]) -> None:
    if path:
        csv_io.write_json_atomic(path, payload)
        logger.info(f"Report written to {path}")
    else:
        sys.stdout.write(json.dumps(payload, indent=2) + "\n")


def _write_curves(path: str, curves: Sequence[Dict[str, Any]]) -> None:
    csv_io.write_csv_atomic(path, CURVE_HEADER, ([c[key] for key in CURVE_HEADER] for c in curves))
    logger.info(f"Curves written to {path}")


def _options(args: argparse.Namespace, **extra) -> AnalysisOptions:
    return AnalysisOptions(
        method=Method.from_cli(args.method),
        alpha=args.alpha,
        bootstraps=args.bootstraps,
        seed=args.seed,
        template=args.template,
        template_size=args.template_size,
        one_sided=args.one_sided,
        max_iterations=args.max_iterations,
        threads=args.threads,
        **extra
    )


def cmd_fit(args: argparse.Namespace) -> int:
    if args.curves and not args.k_max:
        raise ValueError("--curves needs --k-max")
    dataset = csv_io.load_dataset(args.design, args.response, args.contrasts, args.transpose)
    subsets = None
    if args.subsets:
        subsets = csv_io.read_subsets(
            args.subsets, dataset.n_contrasts, dataset.n_points, dataset.point_labels
        )
    options = _options(
        args,
        bh_q=args.bh_q,
        k_max=args.k_max,
        select_p=args.select_p,
        select_effect=args.select_effect
    )
    report = AnalysisService().analyze(dataset, options, subsets)
    if args.curves:
        _write_curves(args.curves, report['curves'])
    _emit_json(report, args.output)
    return 0


def cmd_bound(args: argparse.Namespace) -> int:
    if args.curves and not args.k_max:
        raise ValueError("--curves needs --k-max")
    p_field, labels = csv_io.read_p_values(args.p_values)
    subsets = None
    if args.subsets:
        n_contrasts, n_points = p_field.values.shape
        subsets = csv_io.read_subsets(args.subsets, n_contrasts, n_points, labels)
    report = AnalysisService().bound_p_values(
        p_field,
        subsets,
        method=Method.from_cli(args.method),
        alpha=args.alpha,
        lam=args.lam,
        bh_q=args.bh_q,
        k_max=args.k_max,
        template_size=args.template_size,
        template=args.template
    )
    if args.curves:
        _write_curves(args.curves, report['curves'])
    _emit_json(report, args.output)
    return 0


def cmd_curves(args: argparse.Namespace) -> int:
    dataset = csv_io.load_dataset(args.design, args.response, args.contrasts, args.transpose)
    options = _options(args, k_max=args.k_max or dataset.n_hypotheses)
    report = AnalysisService().analyze(dataset, options)
    _write_curves(args.output, report['curves'])
    return 0


def _scenario(args: argparse.Namespace) -> ScenarioConfig:
    seed = args.seed
    if seed is None:
        seed = secrets.randbits(63)
        logger.info(f"No seed given; simulating with seed {seed}")
    try:
        return ScenarioConfig(
            grf=GrfConfig(dims=args.dim, fwhm=args.fwhm),
            n_subjects=args.n_subjects,
            pi0=args.pi0,
            alpha=args.alpha,
            reps=args.reps,
            bootstraps=args.bootstraps,
            methods=[Method.from_cli(name) for name in (args.methods or ["simes"])],
            bh_q=args.bh_q,
            max_iterations=args.max_iterations,
            seed=seed
        )
    except ValidationError as e:
        raise ScenarioError(f"invalid scenario: {e.errors()[0]['msg']}") from None


def cmd_simulate(args: argparse.Namespace) -> int:
    config = _scenario(args)
    report, records = run_simulation(config, threads=args.threads)
    if args.csv:
        csv_io.write_csv_atomic(args.csv, SIM_HEADER, (
            (r.method.value, r.rep, r.violated, r.lambda_used,
             r.power_full, r.power_bh, r.power_p05)
            for r in records
        ))
        logger.info(f"Per-repetition records written to {args.csv}")
    _emit_json(report.model_dump(mode='json'), args.output)
    return 0


COMMANDS = {
    'fit': cmd_fit,
    'bound': cmd_bound,
    'curves': cmd_curves,
    'simulate': cmd_simulate,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level.upper(), args.log_format, stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except PosthocError as e:
        logger.error(str(e))
        return e.exit_code
    except (ValueError, ValidationError) as e:
        logger.error(f"Invalid arguments: {e}")
        return 1
    except Exception as e:
        logger.error(f"Unexpected error: {e}", exc_info=True)
        return 1


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()
