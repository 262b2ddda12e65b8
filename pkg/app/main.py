"""
Command-line entry point:

    python -m app.main <subcommand> --config <path> [--out <dir>] [--param gamma --values 0.1,1,10]
"""
import argparse
import logging
import sys
from typing import List, Optional

from dotenv import load_dotenv

from app import __version__
from app.services.config_loader import load_config
from app.services.scenario_runner import (
    SWEEP_PARAMETERS,
    reproduce_paper,
    run_attack,
    run_grad_check,
    run_nominal,
    run_sweep,
)
from app.utils.exceptions import AttackSynthesisError
from app.utils.logging_config import setup_logging

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_NOT_CONVERGED = 3


def _parse_values(text: str) -> List[float]:
    try:
        return [float(item) for item in text.split(",") if item.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"values must be comma-separated numbers, got '{text}'")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sta-synth",
        description="Stealthy sustainability-targeting attack synthesis on linear CPS",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", default=None, help="Override LOG_LEVEL")
    subcommands = parser.add_subparsers(dest="command", required=True)

    for name, help_text in (
        ("nominal", "LQR baseline without attack"),
        ("attack", "GAD attack synthesis with stealth scaling"),
        ("grad-check", "Finite-difference check of the adjoint gradients"),
        ("sweep", "Repeat the attack synthesis over gamma or alpha values"),
    ):
        sub = subcommands.add_parser(name, help=help_text)
        sub.add_argument("--config", required=True, help="Scenario JSON document")
        sub.add_argument("--out", default=None, help="Output directory (overrides outputs.directory)")
        if name == "grad-check":
            sub.add_argument("--points", type=int, default=20, help="Random grid times checked for delta")
            sub.add_argument("--refine", action="store_true", help="Repeat on a grid with half the step")
        if name == "sweep":
            sub.add_argument("--param", required=True, choices=SWEEP_PARAMETERS)
            sub.add_argument("--values", required=True, type=_parse_values, help="Comma-separated values")

    reproduce = subcommands.add_parser("reproduce-paper", help="Built-in preset of the reference experiment")
    reproduce.add_argument("--out", default=None, help="Output directory")
    return parser


def _print_grad_table(reports) -> bool:
    print(f"{'dt':>12} {'worst dJ/dK':>14} {'worst dJ/ddelta':>16}  status")
    for report in reports:
        status = "PASS" if report.passed else "FAIL"
        print(f"{report.dt:>12.6g} {report.worst_gain_error:>14.3e} {report.worst_attack_error:>16.3e}  {status}")
    return all(report.passed for report in reports)


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level)

    try:
        if args.command == "reproduce-paper":
            report, _ = reproduce_paper(args.out)
            print(report.model_dump_json(indent=2))
            return EXIT_OK if report.attack.converged else EXIT_NOT_CONVERGED

        config = load_config(args.config)
        if args.command == "nominal":
            print(run_nominal(config, args.out).model_dump_json(indent=2))
        elif args.command == "attack":
            report = run_attack(config, args.out)
            print(report.model_dump_json(indent=2))
            if not report.attack.converged:
                return EXIT_NOT_CONVERGED
        elif args.command == "grad-check":
            _print_grad_table(run_grad_check(config, n_points=args.points, refine=args.refine))
        elif args.command == "sweep":
            rows = run_sweep(config, args.param, args.values, args.out)
            for row in rows:
                print(row.model_dump_json())
    except AttackSynthesisError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return e.exit_code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
