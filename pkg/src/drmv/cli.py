"""Command-line entry point: ``drmv {solve,calibrate,backtest,oracle-check}``.

Exit codes: 0 success, 1 oracle disagreement, 2 parse or config error,
3 infeasible problem, 4 degenerate input, 5 non-convergence.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .duality import parse_order
from .errors import DRMVError, InvalidInputError
from .pipeline import (
    PipelineConfig,
    backtest,
    calibration_dict,
    canonical_json,
    load_config_file,
    load_csv,
    run_calibration,
    run_pipeline,
    stage,
)

# flag dest -> PipelineConfig field
_FIELD = {
    "returns": "returns_path",
    "rho": "rho",
    "p": "p",
    "delta0": "delta0",
    "epsilon": "epsilon",
    "delta": "delta_override",
    "alpha_bar": "alpha_override",
    "mc_samples": "mc_samples",
    "seed": "seed",
    "window": "window",
    "rebalance": "rebalance",
    "workers": "workers",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(2, f"{self.prog}: error: {message}\n")


def _order(text):
    try:
        return parse_order(text)
    except InvalidInputError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _run_flags(sub):
    g = sub.add_argument_group("pipeline")
    g.add_argument("--config", help="JSON file with PipelineConfig field names; flags override it")
    g.add_argument("--returns", help="CSV of simple returns, header row of asset labels")
    g.add_argument("--rho", type=float, help="target return of the classical problem")
    g.add_argument("--p", type=_order, help="regularizer norm order: 1, 2 or inf")
    g.add_argument("--delta0", type=float, help="miscoverage level of the radius (default 0.05)")
    g.add_argument("--epsilon", type=float, help="miscoverage level of the floor (default 0.05)")
    g.add_argument("--delta", type=float, help="use this radius instead of calibrating it")
    g.add_argument("--alpha-bar", type=float, help="use this floor instead of calibrating it")
    g.add_argument("--mc-samples", type=int, help="Monte Carlo draws for the radius (default 100000)")
    g.add_argument("--seed", type=int, help="Monte Carlo seed (default 42)")
    g.add_argument("--workers", type=int, help="threads for Monte Carlo blocks and backtest windows")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="drmv", description="Wasserstein-robust mean-variance portfolios.")
    subs = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    solve = subs.add_parser("solve", help="calibrate radius and floor, then solve")
    _run_flags(solve)
    solve.add_argument("--out", help="report destination (default: standard output)")

    cal = subs.add_parser("calibrate", help="radius and floor only")
    _run_flags(cal)
    cal.add_argument("--out", help="report destination (default: standard output)")

    bt = subs.add_parser("backtest", help="rolling-window re-estimation and wealth path")
    _run_flags(bt)
    bt.add_argument("--window", type=int, help="lookback length in periods")
    bt.add_argument("--rebalance", type=int, help="periods between rebalances (default 1)")
    bt.add_argument("--out", help="report destination (default: standard output)")

    oc = subs.add_parser("oracle-check", help="compare closed forms with brute-force references")
    oc.add_argument("--seed", type=int, default=0)
    oc.add_argument("--instances", type=int, default=100)
    oc.add_argument("--no-cross-check", action="store_true",
                    help="skip the conic-solver cross-check of the worst-case mean")
    oc.add_argument("--out", help="result destination (default: standard output)")
    return parser


def config_from_args(args) -> PipelineConfig:
    with stage("config"):
        values = load_config_file(args.config) if getattr(args, "config", None) else {}
        for dest, name in _FIELD.items():
            v = getattr(args, dest, None)
            if v is not None:
                values[name] = v
        return PipelineConfig.from_mapping(values)


def _emit(text: str, out) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "oracle-check":
            from .oracle import agreement_suite

            rows = agreement_suite(args.seed, args.instances, not args.no_cross_check)
            lines = [f"{'PASS' if ok else 'FAIL'} {name}: max relative error {err:.3e} "
                     f"(tolerance {tol:g})" for name, err, tol, ok in rows]
            _emit("\n".join(lines) + "\n", args.out)
            return 0 if all(r[3] for r in rows) else 1
        config = config_from_args(args)
        if args.command == "solve":
            _emit(run_pipeline(config).to_json(), args.out)
        elif args.command == "calibrate":
            series = load_csv(config.returns_path)
            stages = run_calibration(series, config)
            _emit(canonical_json(calibration_dict(stages, series, config)) + "\n", args.out)
        else:
            _emit(backtest(config).to_json(), args.out)
    except DRMVError as exc:
        print(f"drmv: error: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
