"""
Residual detector and alpha-stealthy attack scaling.

The detector compares the plant output z against the attack-free closed loop
z_ref (same gain, same initial state) and alarms when r = ||z_ref - z||_2 exceeds
alpha.  The unscaled optimal attack is shrunk by mu in (0, 1] until it never alarms.
"""
from typing import Callable
import logging

import numpy as np

from app.models import (
    AttackSignal,
    FeedbackGain,
    PlantModel,
    ScenarioState,
    StealthConfig,
    StealthResult,
    TimeGrid,
    Trajectory,
)
from app.services.cps_core import closed_loop_matrix, rk4_step_matrices, simulate_closed_loop
from app.utils.exceptions import ConfigurationError, InfeasibilityError

logger = logging.getLogger(__name__)

MU_FLOOR = 1e-12
# Free-response look-ahead for the pointwise mode, in closed-loop time constants
LOOKAHEAD_TIME_CONSTANTS = 10.0


def residual(traj: Trajectory, ref_traj: Trajectory) -> np.ndarray:
    """r(t_i) = ||z_ref(t_i) - z(t_i)||_2"""
    if traj.z.shape != ref_traj.z.shape:
        raise ConfigurationError(
            f"trajectory output {traj.z.shape} does not match reference {ref_traj.z.shape}", field_path="ref_traj"
        )
    return np.linalg.norm(ref_traj.z - traj.z, axis=1)


def _bisect(feasible: Callable[[float], bool], lo: float, hi: float, tol: float) -> float:
    """Largest feasible point of [lo, hi] to within tol, lo assumed feasible and hi not"""
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if feasible(mid):
            lo = mid
        else:
            hi = mid
    return lo


def _constant_mu(sup_residual_at: Callable[[float], float], alpha: float, tol: float) -> float:
    feasible = lambda mu: sup_residual_at(mu) <= alpha
    if feasible(1.0):
        return 1.0

    mu = _bisect(feasible, 0.0, 1.0, tol)
    if mu > 0.0:
        return mu

    # Nothing feasible above tol: walk down geometrically, then refine relative to the scale found
    hi = tol
    while hi > MU_FLOOR:
        lo = 0.5 * hi
        if feasible(lo):
            return _bisect(feasible, lo, hi, tol * lo)
        hi = lo
    raise InfeasibilityError(f"no scaling above {MU_FLOOR:g} keeps the residual below alpha={alpha:g}")


def _pointwise_mu(
    plant: PlantModel, gain: FeedbackGain, delta_unscaled: AttackSignal, grid: TimeGrid, config: StealthConfig
) -> np.ndarray:
    """
    Causal forward pass: mu(t_i) is the largest value keeping the residual at t_i and
    the attack-free continuation over a look-ahead window below alpha.
    """
    A_cl = closed_loop_matrix(plant, gain)
    M, G0, G1 = rk4_step_matrices(A_cl, plant.B, grid.dt)
    decay = float(np.max(np.linalg.eigvals(A_cl).real))
    window = grid.N if decay >= 0 else min(grid.N, int(np.ceil(LOOKAHEAD_TIME_CONSTANTS / (-decay * grid.dt))))

    # L M^m for m = 0..window
    propagators = np.empty((window + 1, plant.j, plant.n))
    power = np.eye(plant.n)
    for m in range(window + 1):
        propagators[m] = plant.L @ power
        power = M @ power

    samples = delta_unscaled.samples
    mu = np.ones(grid.n_points)
    pending = np.zeros(plant.n)  # M e_{i-1} + G0 mu_{i-1} delta_{i-1}
    for i in range(grid.n_points):
        now_b = G1 @ samples[i] if i > 0 else np.zeros(plant.n)
        next_a = M @ pending
        next_b = M @ now_b + G0 @ samples[i]
        head_a, head_b = plant.L @ pending, plant.L @ now_b
        tail_a, tail_b = propagators @ next_a, propagators @ next_b

        def worst(value: float) -> float:
            return max(
                float(np.linalg.norm(head_a + value * head_b)),
                float(np.max(np.linalg.norm(tail_a + value * tail_b, axis=1))),
            )

        if worst(1.0) > config.alpha:
            mu[i] = max(_bisect(lambda value: worst(value) <= config.alpha, 0.0, 1.0, config.bisection_tol), MU_FLOOR)
        pending = M @ (pending + mu[i] * now_b) + G0 @ (mu[i] * samples[i])
    return mu


def stealth_scale(
    plant: PlantModel,
    gain: FeedbackGain,
    delta_unscaled: AttackSignal,
    x0: ScenarioState,
    grid: TimeGrid,
    config: StealthConfig,
) -> StealthResult:
    ref_traj = simulate_closed_loop(plant, gain, AttackSignal.zeros(grid, plant.k), x0, grid)

    def residual_for(attack: AttackSignal) -> np.ndarray:
        return residual(simulate_closed_loop(plant, gain, attack, x0, grid), ref_traj)

    if config.mode == "constant_mu":
        mu = _constant_mu(
            lambda value: float(np.max(residual_for(delta_unscaled.scaled(value)))),
            config.alpha,
            config.bisection_tol,
        )
    else:
        mu = _pointwise_mu(plant, gain, delta_unscaled, grid, config)

    delta_final = delta_unscaled.scaled(mu)
    r = residual_for(delta_final)
    sup_r = float(np.max(r))

    if sup_r > config.alpha:
        # Only reachable in pointwise mode if the look-ahead window was too short
        shrink = config.alpha / sup_r
        logger.warning(f"Pointwise profile exceeded alpha (sup r={sup_r:.3e}); shrinking uniformly by {shrink:.6f}")
        mu = np.maximum(np.asarray(mu) * shrink * (1.0 - 1e-9), MU_FLOOR)
        delta_final = delta_unscaled.scaled(mu)
        r = residual_for(delta_final)
        sup_r = float(np.max(r))
        if sup_r > config.alpha:
            raise InfeasibilityError(f"could not bring the residual below alpha={config.alpha:g}")

    logger.info(
        f"Stealth scaling ({config.mode}): mu0={float(np.min(mu)):.6g}, sup residual {sup_r:.3e} <= alpha {config.alpha:g}"
    )
    return StealthResult(mu=mu, delta_final=delta_final, residual=r, sup_residual=sup_r)


class StealthMonitor:
    """Residual detector with threshold alpha, and the attack scaling that keeps it silent"""

    def __init__(self, config: StealthConfig):
        self.config = config

    def alarms(self, traj: Trajectory, ref_traj: Trajectory) -> np.ndarray:
        """Grid indices where the residual exceeds alpha"""
        return np.flatnonzero(residual(traj, ref_traj) > self.config.alpha)

    def scale(
        self,
        plant: PlantModel,
        gain: FeedbackGain,
        delta_unscaled: AttackSignal,
        x0: ScenarioState,
        grid: TimeGrid,
    ) -> StealthResult:
        return stealth_scale(plant, gain, delta_unscaled, x0, grid, self.config)
