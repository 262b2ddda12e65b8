"""
Gradient ascent-descent (GAD) max-min solver.

Each iteration takes a descent step on the feedback gain K (kept stabilizing by
step halving) and a projected ascent step on the attack delta (clipped to the box
|delta_i(t)| <= delta_max, halved while it would lower J), stopping once successive
impact-effort costs differ by less than eta.
"""
from typing import Optional
import logging

import numpy as np

from app.core.config import settings
from app.models import (
    AttackSignal,
    CostSpec,
    FeedbackGain,
    GadConfig,
    GadResult,
    MaximumPrincipleReport,
    PlantModel,
    ScenarioState,
    TimeGrid,
    Trajectory,
)
from app.services.adjoint_grad import (
    grad_attack,
    grad_gain,
    hamiltonian,
    hamiltonian_attack_gradient,
    integrate_costate,
    smooth_random_attack,
)
from app.services.cost_model import impact_effort_cost
from app.services.cps_core import is_stabilizing, simulate_closed_loop
from app.utils.exceptions import ConfigurationError, DivergenceError, StepFailureError

logger = logging.getLogger(__name__)

# Tolerated drop in J when accepting an ascent step
ASCENT_SLACK = 1e-10


def _simulate(plant, gain, attack, x0, grid, iteration: int) -> Trajectory:
    try:
        return simulate_closed_loop(plant, gain, attack, x0, grid)
    except DivergenceError as e:
        logger.error(f"GAD simulation diverged at iteration {iteration}: {e}")
        raise DivergenceError(str(e), index=e.index, iteration=iteration) from e


def _descent_step(plant: PlantModel, gain: FeedbackGain, gradient: np.ndarray, config: GadConfig, iteration: int):
    """K - lambda_K * G, halving the step until the closed loop is stable"""
    step = config.lambda_K
    for attempt in range(config.backtrack_max + 1):
        candidate = FeedbackGain(K=gain.K - step * gradient)
        if is_stabilizing(plant, candidate):
            if attempt:
                logger.debug(f"Iteration {iteration}: descent step accepted after {attempt} halvings")
            return candidate, attempt
        step *= 0.5
    raise StepFailureError(
        f"no stabilizing descent step after {config.backtrack_max} halvings", iteration=iteration
    )


def _ascent_step(
    plant: PlantModel,
    spec: CostSpec,
    grid: TimeGrid,
    x0: ScenarioState,
    gain: FeedbackGain,
    attack: AttackSignal,
    base_traj: Trajectory,
    gradient: np.ndarray,
    config: GadConfig,
    iteration: int,
):
    """Projected step clip(delta + lambda_delta * g), halved until J at the new gain does not drop"""
    J_base = impact_effort_cost(base_traj, attack, spec, grid)
    step = config.lambda_delta
    for attempt in range(config.backtrack_max + 1):
        candidate = AttackSignal(
            samples=np.clip(attack.samples + step * gradient, -config.delta_max, config.delta_max)
        )
        traj = _simulate(plant, gain, candidate, x0, grid, iteration)
        if impact_effort_cost(traj, candidate, spec, grid) >= J_base - ASCENT_SLACK:
            if attempt:
                logger.debug(f"Iteration {iteration}: ascent step accepted after {attempt} halvings")
            return candidate, traj, attempt
        step *= 0.5
    logger.warning(f"Iteration {iteration}: no ascent step kept J from decreasing; attack left unchanged")
    return attack, base_traj, config.backtrack_max


def initial_attack(grid: TimeGrid, k: int, config: GadConfig) -> AttackSignal:
    """
    Seeded smooth random attack of amplitude init_attack_amplitude, or zero. With
    Ru = gamma the LQR gain and a zero attack form a saddle of J, so a zero start
    stays there and a seeded start explores the flat attack directions.
    """
    if config.init_attack_amplitude == 0.0:
        return AttackSignal.zeros(grid, k)
    rng = np.random.default_rng(config.seed)
    attack = smooth_random_attack(grid, k, rng, amplitude=config.init_attack_amplitude)
    return AttackSignal(samples=np.clip(attack.samples, -config.delta_max, config.delta_max))


def run_gad(
    plant: PlantModel,
    spec: CostSpec,
    grid: TimeGrid,
    x0: ScenarioState,
    config: GadConfig,
    init_K: FeedbackGain,
    init_delta: AttackSignal,
) -> GadResult:
    if not is_stabilizing(plant, init_K):
        raise ConfigurationError("initial gain is not stabilizing", field_path="gad.init_K")
    if np.max(np.abs(init_delta.samples)) > config.delta_max:
        raise ConfigurationError(
            f"initial attack leaves the box |delta| <= {config.delta_max:g}", field_path="gad.init_delta"
        )

    gain, attack = init_K, init_delta
    traj = _simulate(plant, gain, attack, x0, grid, iteration=0)
    J = impact_effort_cost(traj, attack, spec, grid)
    J_history = [J]
    converged = False
    backtracks = 0
    iteration = 0

    logger.info(
        f"GAD started: J={J:.6g}, lambda_K={config.lambda_K:g}, lambda_delta={config.lambda_delta:g}, "
        f"eta={config.eta:g}, max_iters={config.max_iters}"
    )
    for iteration in range(1, config.max_iters + 1):
        costate = integrate_costate(traj, plant, gain, spec, grid)
        G = grad_gain(traj, costate, plant, gain, spec, grid).G
        new_gain, halvings = _descent_step(plant, gain, G, config, iteration)
        backtracks += halvings

        base_traj = _simulate(plant, new_gain, attack, x0, grid, iteration)
        if config.lambda_delta > 0.0:
            if config.stale_costate:
                # Gradient from the previous state and costate, evaluated at the updated gain
                ascent_traj = Trajectory(x=traj.x, u=attack.samples - traj.z @ new_gain.K.T, z=traj.z)
                ascent_costate = costate
            else:
                ascent_traj = base_traj
                ascent_costate = integrate_costate(ascent_traj, plant, new_gain, spec, grid)
            g_delta = grad_attack(ascent_traj, ascent_costate, plant, new_gain, spec, grid).samples
            attack, traj, halvings = _ascent_step(
                plant, spec, grid, x0, new_gain, attack, base_traj, g_delta, config, iteration
            )
            backtracks += halvings
        else:
            traj = base_traj

        gain = new_gain
        J_new = impact_effort_cost(traj, attack, spec, grid)
        J_history.append(J_new)

        if iteration % settings.GAD_LOG_EVERY == 0:
            logger.info(f"GAD iteration {iteration}: J={J_new:.8g}, |dJ|={abs(J_new - J):.3e}, K={gain.K.ravel()}")
        else:
            logger.debug(f"GAD iteration {iteration}: J={J_new:.8g}")

        if iteration >= config.min_iters and abs(J_new - J) < config.eta:
            converged = True
            break
        J = J_new

    if converged:
        logger.info(f"GAD converged after {iteration} iterations: J={J_history[-1]:.8g}, K0={gain.K.ravel()}")
    else:
        logger.warning(f"GAD stopped at max_iters={config.max_iters} without meeting eta={config.eta:g}")

    return GadResult(
        K0=gain,
        delta_unscaled=attack,
        J_history=J_history,
        iterations=iteration,
        converged=converged,
        backtracks=backtracks,
        seed=config.seed,
        delta_max=config.delta_max,
    )


def settled_magnitude(attack: AttackSignal, grid: TimeGrid, tail_fraction: float = 0.1) -> float:
    """Mean attack norm over the last tail_fraction of the horizon"""
    start = min(int(np.floor((1.0 - tail_fraction) * grid.N)), grid.N)
    return float(np.mean(np.linalg.norm(attack.samples[start:], axis=1)))


def verify_maximum_principle(
    result: GadResult,
    plant: PlantModel,
    spec: CostSpec,
    grid: TimeGrid,
    x0: ScenarioState,
    n_times: int = 100,
    n_perturbations: int = 100,
    seed: Optional[int] = None,
) -> MaximumPrincipleReport:
    """
    Brute-force check that delta_0(t) maximizes H(x_0(t), Omega_0(t), .) over the
    admissible box at random grid times.
    """
    rng = np.random.default_rng(result.seed if seed is None else seed)
    gain, attack = result.K0, result.delta_unscaled
    traj = simulate_closed_loop(plant, gain, attack, x0, grid)
    costate = integrate_costate(traj, plant, gain, spec, grid)

    indices = rng.choice(grid.n_points, size=min(n_times, grid.n_points), replace=False)
    worst = -np.inf
    violations = 0
    for i in indices:
        x_i, omega_i, delta_i = traj.x[i], costate.omega[i], attack.samples[i]
        H0 = hamiltonian(x_i, omega_i, delta_i, plant, gain, spec)
        tol = 1e-4 * (1.0 + abs(H0))
        for _ in range(n_perturbations):
            candidate = rng.uniform(-result.delta_max, result.delta_max, size=plant.k)
            excess = hamiltonian(x_i, omega_i, candidate, plant, gain, spec) - H0
            worst = max(worst, excess)
            if excess > tol:
                violations += 1

    gradient = hamiltonian_attack_gradient(traj, costate, plant, gain, spec)
    interior = np.all(np.abs(attack.samples) < result.delta_max, axis=1)
    max_interior = float(np.max(np.linalg.norm(gradient[interior], axis=1))) if interior.any() else 0.0

    report = MaximumPrincipleReport(
        worst_violation=float(worst),
        violations=violations,
        max_interior_gradient=max_interior,
        checked_times=len(indices),
        checked_perturbations=n_perturbations,
    )
    if violations:
        logger.warning(f"Maximum principle violated {violations} times, worst excess {worst:.3e}")
    return report


class GadOptimizer:
    """GAD solver bound to one set of hyperparameters"""

    def __init__(self, config: Optional[GadConfig] = None):
        self.config = config or GadConfig()

    def initial_attack(self, grid: TimeGrid, k: int) -> AttackSignal:
        return initial_attack(grid, k, self.config)

    def run(
        self,
        plant: PlantModel,
        spec: CostSpec,
        grid: TimeGrid,
        x0: ScenarioState,
        init_K: FeedbackGain,
        init_delta: Optional[AttackSignal] = None,
    ) -> GadResult:
        """Solve from init_K and init_delta, or from the configured initial attack when none is given"""
        if init_delta is None:
            init_delta = self.initial_attack(grid, plant.k)
        return run_gad(plant, spec, grid, x0, self.config, init_K, init_delta)

    def verify(
        self, result: GadResult, plant: PlantModel, spec: CostSpec, grid: TimeGrid, x0: ScenarioState, **kwargs
    ) -> MaximumPrincipleReport:
        return verify_maximum_principle(result, plant, spec, grid, x0, **kwargs)
