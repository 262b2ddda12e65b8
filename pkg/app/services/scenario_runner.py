"""
Experiment orchestration: nominal LQR baseline, full attack synthesis, gradient
checks, parameter sweeps and the built-in reproduction preset.
"""
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple
import json
import logging
import math

import numpy as np

from app import __version__
from app.core.config import settings
from app.models import (
    AttackRun,
    AttackSignal,
    AttackSummary,
    GradCheckReport,
    NominalRun,
    NominalSummary,
    Provenance,
    ScenarioConfig,
    SummaryReport,
    SweepRow,
    TimeGrid,
)
from app.services.adjoint_grad import finite_difference_check, perturbed_stabilizing_gain, smooth_random_attack
from app.services.config_loader import config_hash, parse_config
from app.services.cost_model import effort_cost, impact_effort_cost, sustainability_cost
from app.services.cps_core import closed_loop_eigenvalues, simulate_closed_loop
from app.services.gad_optimizer import GadOptimizer, settled_magnitude
from app.services.lqr_baseline import lqr_gain, output_feedback_gain, solve_care
from app.services.report_builder import atomic_write, sweep_csv, write_summary, write_trajectory_csv
from app.services.stealth_monitor import StealthMonitor
from app.utils.exceptions import AttackSynthesisError, ConfigurationError
from app.utils.monitoring import monitor_performance

logger = logging.getLogger(__name__)

SWEEP_PARAMETERS = ("gamma", "alpha")

REFERENCE_PRESET = """
{
  "name": "two-state-reference",
  "plant": {"n": 2, "k": 1, "j": 2,
            "A": [[1, 2], [1, 2]],
            "B": [[2], [1]],
            "L": [[1, 0], [0, 1]]},
  "x0": [1.0, 1.0],
  "grid": {"T": 100.0, "N": 10000},
  "cost": {"Qx": [[1, 0], [0, 1]], "Ru": [[1]], "Qf": [[0, 0], [0, 0]], "gamma": 1.0},
  "gad": {"lambda_K": 1e-4, "init_attack_amplitude": 0.0},
  "stealth": {"alpha": 0.003, "mode": "constant_mu"}
}
"""

# Values reported for the preset system
REPORTED_VALUES = {
    "K_lqr": [1.26, 4.76],
    "J_nominal": 8.47,
    "K0": [2.74, 12.55],
    "settled_attack": 0.37,
    "S_attack": 23.81,
    "percent_S_increase": 181.0,
}


def _output_dir(config: ScenarioConfig, out_dir: Optional[str]) -> Path:
    return Path(out_dir or config.outputs.directory or settings.OUTPUT_DIR)


def _provenance(config: ScenarioConfig) -> Provenance:
    return Provenance(config_hash=config_hash(config), seed=config.gad.seed, grid=config.grid, tool_version=__version__)


def percent_increase(S_attack: float, S_nominal: float) -> float:
    if S_nominal == 0.0:
        return 0.0 if S_attack == 0.0 else math.nan
    return 100.0 * (S_attack - S_nominal) / S_nominal


# ==============================================================================
# PIPELINES
# ==============================================================================

def nominal_baseline(config: ScenarioConfig) -> NominalRun:
    """LQR gain and the attack-free closed loop"""
    plant, cost, grid, x0 = config.plant_model(), config.cost_spec(), config.time_grid(), config.initial_state()
    riccati = solve_care(plant.A, plant.B, cost.Qx, cost.Ru)
    gain = output_feedback_gain(lqr_gain(riccati, plant.B, cost.Ru), plant.L)
    no_attack = AttackSignal.zeros(grid, plant.k)
    traj = simulate_closed_loop(plant, gain, no_attack, x0, grid)

    summary = NominalSummary(
        K_lqr=gain.K.tolist(),
        S_nominal=sustainability_cost(traj, cost, grid),
        J_nominal=impact_effort_cost(traj, no_attack, cost, grid),
        riccati_residual=riccati.residual_norm,
    )
    logger.info(f"Nominal baseline: K_lqr={gain.K.ravel()}, S={summary.S_nominal:.6g}")
    return NominalRun(gain=gain, riccati=riccati, traj=traj, summary=summary)


def attack_pipeline(config: ScenarioConfig, baseline: NominalRun, check_maximum_principle: bool = True) -> AttackRun:
    """GAD from the LQR gain and the seeded initial attack, stealth scaling, final simulation"""
    plant, cost, grid, x0 = config.plant_model(), config.cost_spec(), config.time_grid(), config.initial_state()

    optimizer = GadOptimizer(config.gad)
    gad = optimizer.run(plant, cost, grid, x0, baseline.gain)
    stealth = StealthMonitor(config.stealth).scale(plant, gad.K0, gad.delta_unscaled, x0, grid)
    attack = stealth.delta_final
    traj = simulate_closed_loop(plant, gad.K0, attack, x0, grid)

    S_attack = sustainability_cost(traj, cost, grid)
    violation = None
    if check_maximum_principle:
        violation = optimizer.verify(gad, plant, cost, grid, x0).worst_violation

    summary = AttackSummary(
        K0=gad.K0.K.tolist(),
        mu0=stealth.mu0,
        sup_residual=stealth.sup_residual,
        S_attack=S_attack,
        E_attack=effort_cost(attack, cost.gamma, grid),
        J_attack=impact_effort_cost(traj, attack, cost, grid),
        E_unscaled=effort_cost(gad.delta_unscaled, cost.gamma, grid),
        iterations=gad.iterations,
        converged=gad.converged,
        percent_S_increase=percent_increase(S_attack, baseline.summary.S_nominal),
        settled_state=traj.x[-1].tolist(),
        settled_attack=settled_magnitude(attack, grid),
        settled_input=(traj.u[-1] - attack.samples[-1]).tolist(),
        settled_input_plus_attack=traj.u[-1].tolist(),
        closed_loop_real_parts=np.sort(closed_loop_eigenvalues(plant, gad.K0).real).tolist(),
        max_principle_violation=violation,
    )
    logger.info(
        f"Attack outcome: S={S_attack:.6g} vs nominal {baseline.summary.S_nominal:.6g} "
        f"({summary.percent_S_increase:+.2f}%), mu0={summary.mu0:.6g}"
    )
    return AttackRun(gad=gad, stealth=stealth, traj=traj, summary=summary)


# ==============================================================================
# SUBCOMMANDS
# ==============================================================================

@monitor_performance
def run_nominal(config: ScenarioConfig, out_dir: Optional[str] = None) -> SummaryReport:
    baseline = nominal_baseline(config)
    report = SummaryReport(nominal=baseline.summary, provenance=_provenance(config))

    directory = _output_dir(config, out_dir)
    if config.outputs.emit_trajectory:
        grid = config.time_grid()
        write_trajectory_csv(
            directory / "nominal_trajectory.csv", grid, baseline.traj, AttackSignal.zeros(grid, config.plant.k)
        )
    write_summary(directory / "summary.json", report)
    return report


@monitor_performance
def run_attack(config: ScenarioConfig, out_dir: Optional[str] = None) -> SummaryReport:
    baseline = nominal_baseline(config)
    outcome = attack_pipeline(config, baseline)
    report = SummaryReport(nominal=baseline.summary, attack=outcome.summary, provenance=_provenance(config))

    directory = _output_dir(config, out_dir)
    if config.outputs.emit_trajectory:
        write_trajectory_csv(
            directory / "attack_trajectory.csv",
            config.time_grid(),
            outcome.traj,
            outcome.stealth.delta_final,
            outcome.stealth.residual,
        )
    write_summary(directory / "summary.json", report)
    if not outcome.gad.converged:
        logger.warning("Attack synthesis finished without convergence; summary marks converged=false")
    return report


@monitor_performance
def run_grad_check(config: ScenarioConfig, n_points: int = 20, refine: bool = False) -> List[GradCheckReport]:
    """
    Finite-difference check of the adjoint gradients at a random stabilizing gain near
    the LQR gain and a smooth random attack. With ``refine`` the check is repeated on
    a grid with half the step at the same times.
    """
    plant, cost, grid, x0 = config.plant_model(), config.cost_spec(), config.time_grid(), config.initial_state()
    baseline_gain = nominal_baseline(config).gain
    rng = np.random.default_rng(config.gad.seed)
    gain = perturbed_stabilizing_gain(plant, baseline_gain, rng)
    attack_rng_state = rng.bit_generator.state
    attack = smooth_random_attack(grid, plant.k, rng)

    reports = [finite_difference_check(plant, cost, grid, x0, gain, attack, n_points=n_points, rng=rng)]
    if refine:
        fine_grid = TimeGrid(T=grid.T, N=2 * grid.N)
        rng.bit_generator.state = attack_rng_state
        fine_attack = smooth_random_attack(fine_grid, plant.k, rng)
        reports.append(
            finite_difference_check(plant, cost, fine_grid, x0, gain, fine_attack, times=reports[0].attack_times)
        )
        coarse, fine = reports
        G_coarse, G_fine = np.asarray(coarse.gain_adjoint), np.asarray(fine.gain_adjoint)
        shift = float(np.max(np.abs(G_coarse - G_fine)) / max(np.max(np.abs(G_fine)), 1e-12))
        logger.info(
            f"Refinement: K gradient moved {shift:.3e} between dt={coarse.dt:g} and dt={fine.dt:g}; "
            f"worst errors K {coarse.worst_gain_error:.3e} -> {fine.worst_gain_error:.3e}, "
            f"delta {coarse.worst_attack_error:.3e} -> {fine.worst_attack_error:.3e}"
        )
    return reports


def _sweep_variant(config: ScenarioConfig, parameter: str, value: float) -> ScenarioConfig:
    if parameter == "gamma":
        return config.model_copy(update={"cost": config.cost.model_copy(update={"gamma": value})})
    return config.model_copy(update={"stealth": config.stealth.model_copy(update={"alpha": value})})


@monitor_performance
def run_sweep(
    config: ScenarioConfig, parameter: str, values: Sequence[float], out_dir: Optional[str] = None
) -> List[SweepRow]:
    """One attack synthesis per value against a shared nominal baseline; rows keep input order"""
    if parameter not in SWEEP_PARAMETERS:
        raise ConfigurationError(f"unknown sweep parameter '{parameter}'", field_path="param")
    if not values:
        raise ConfigurationError("sweep needs at least one value", field_path="values")
    baseline = nominal_baseline(config)

    def run_row(value: float) -> SweepRow:
        try:
            if (parameter == "gamma" and value < 0) or (parameter == "alpha" and value <= 0):
                raise ConfigurationError(f"invalid {parameter} value {value:g}", field_path=parameter)
            summary = attack_pipeline(_sweep_variant(config, parameter, value), baseline, check_maximum_principle=False).summary
            return SweepRow(
                value=value,
                S_attack=summary.S_attack,
                E_attack=summary.E_attack,
                E_unscaled=summary.E_unscaled,
                mu0=summary.mu0,
                percent_S_increase=summary.percent_S_increase,
            )
        except AttackSynthesisError as e:
            logger.error(f"Sweep row {parameter}={value:g} failed: {e}")
            return SweepRow(value=value, error=str(e))

    if settings.SWEEP_WORKERS > 1:
        with ThreadPoolExecutor(max_workers=settings.SWEEP_WORKERS) as pool:
            rows = list(pool.map(run_row, values))
    else:
        rows = [run_row(value) for value in values]

    atomic_write(_output_dir(config, out_dir) / f"sweep_{parameter}.csv", sweep_csv(parameter, rows))
    return rows


def reference_preset() -> ScenarioConfig:
    return parse_config(REFERENCE_PRESET)


def compare_with_reference(report: SummaryReport, tolerance: float = 0.25) -> Dict[str, Dict[str, float]]:
    """Relative deviation of each headline quantity from the reported values"""
    measured = {
        "K_lqr": np.ravel(report.nominal.K_lqr),
        "J_nominal": report.nominal.J_nominal,
    }
    if report.attack is not None:
        measured.update(
            K0=np.ravel(report.attack.K0),
            settled_attack=report.attack.settled_attack,
            S_attack=report.attack.S_attack,
            percent_S_increase=report.attack.percent_S_increase,
        )

    table = {}
    for key, value in measured.items():
        reference = np.ravel(REPORTED_VALUES[key]).astype(float)
        value = np.ravel(value).astype(float)
        deviation = float(np.max(np.abs(value - reference) / np.abs(reference)))
        table[key] = {"measured": value.tolist(), "reference": reference.tolist(), "relative_deviation": deviation}
        if deviation > tolerance:
            logger.warning(f"{key}: measured {value} deviates {100 * deviation:.1f}% from reported {reference}")
    return table


@monitor_performance
def reproduce_paper(out_dir: Optional[str] = None) -> Tuple[SummaryReport, Dict[str, Dict[str, float]]]:
    config = reference_preset()
    logger.warning(
        "The initial state of the reported experiment is not stated; this preset substitutes x0=[1, 1], "
        "so attack-side numbers are approximate"
    )
    report = run_attack(config, out_dir)
    comparison = compare_with_reference(report)
    atomic_write(_output_dir(config, out_dir) / "reference_comparison.json", json.dumps(comparison, indent=2, sort_keys=True) + "\n")
    return report, comparison
