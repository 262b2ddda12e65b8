"""
Hamiltonian, backward costate integration and adjoint gradients of the
impact-effort cost J with respect to the feedback gain K and the attack delta.

For the quadratic cost the Hamiltonian is

    H = Omega' [(A - BKL) x + B delta] + x' Qx x + u' Ru u - gamma delta' delta,
    u = -K L x + delta,

and the costate obeys Omega' = -dH/dx with Omega(T) = 2 Qf x(T).

The gradients used by the optimizer are those of the cost as it is actually
computed: RK4 steps x_{i+1} = M x_i + G0 delta_i + G1 delta_{i+1} and trapezoid
weights w_i.  Their multipliers lambda_i = dJ/dx_i run backwards through M',

    lambda_N = w_N l_N + 2 Qf x_N,    lambda_i = w_i l_i + M' lambda_{i+1},
    l_i = 2 Qx x_i - 2 (KL)' Ru u_i,

so both gradients agree with finite differences of J up to rounding, and tend
to the continuous ones at the rate of the quadrature.
"""
from typing import Callable, Optional, Sequence, Tuple
import logging

import numpy as np

from app.models import (
    AttackGradient,
    AttackSignal,
    CostSpec,
    CostateTrajectory,
    FeedbackGain,
    GainGradient,
    GradCheckReport,
    OptimalityReport,
    PlantModel,
    ScenarioState,
    TimeGrid,
    Trajectory,
)
from app.services.cost_model import impact_effort_cost, trapezoid_weights
from app.services.cps_core import (
    check_gain,
    closed_loop_matrix,
    integrate_affine,
    is_stabilizing,
    propagate_steps,
    rk4_step_matrices,
    simulate_closed_loop,
)
from app.utils.exceptions import ConfigurationError

logger = logging.getLogger(__name__)

GAIN_FD_STEP = 1e-5
# J is exactly quadratic in delta, so a large step carries no truncation error
ATTACK_FD_STEP = 1e-2


def rk4_polynomials(h: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """
    Coefficients c_p (of F^p) of the RK4 stage matrices M, P0, Pm, P1 returned by
    cps_core.rk4_stage_matrices(F, h)
    """
    c = h / 6.0
    M = np.array([1.0, h, h ** 2 / 2.0, h ** 3 / 6.0, h ** 4 / 24.0])
    P0 = c * np.array([1.0, h, h ** 2 / 2.0, h ** 3 / 4.0])
    Pm = c * np.array([4.0, 2.0 * h, h ** 2 / 2.0])
    P1 = c * np.array([1.0])
    return M, P0, Pm, P1


def _polynomial_pullback(F: np.ndarray, coefficients: np.ndarray, C: np.ndarray) -> np.ndarray:
    """
    W with <W, E> = <d/dF [sum_p c_p F^p](E), C> for every direction E, i.e.
    sum_p c_p sum_r (F')^r C (F')^(p-1-r)
    """
    powers = [np.eye(F.shape[0])]
    for _ in range(1, len(coefficients) - 1):
        powers.append(powers[-1] @ F.T)
    W = np.zeros_like(C)
    for p, c in enumerate(coefficients):
        for r in range(p):
            W += c * powers[r] @ C @ powers[p - 1 - r]
    return W


def _attack_from_trajectory(traj: Trajectory, gain: FeedbackGain) -> np.ndarray:
    return traj.u + traj.z @ gain.K.T


def _check_aligned(traj: Trajectory, costate: CostateTrajectory, grid: TimeGrid) -> None:
    if not (len(traj.x) == len(costate.omega) == grid.n_points):
        raise ConfigurationError(
            f"trajectory ({len(traj.x)}), costate ({len(costate.omega)}) and grid ({grid.n_points}) are not aligned",
            field_path="costate",
        )


def hamiltonian(x, omega, delta, plant: PlantModel, gain: FeedbackGain, spec: CostSpec) -> float:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    omega = np.atleast_1d(np.asarray(omega, dtype=float))
    delta = np.atleast_1d(np.asarray(delta, dtype=float))
    check_gain(plant, gain)
    if x.shape != (plant.n,) or omega.shape != (plant.n,) or delta.shape != (plant.k,):
        raise ConfigurationError(
            f"hamiltonian expects x, omega in R^{plant.n} and delta in R^{plant.k}", field_path="hamiltonian"
        )
    u = delta - gain.K @ (plant.L @ x)
    dynamics = closed_loop_matrix(plant, gain) @ x + plant.B @ delta
    return float(
        omega @ dynamics + x @ spec.Qx @ x + u @ spec.Ru @ u - spec.gamma * (delta @ delta)
    )


def integrate_costate(
    traj: Trajectory, plant: PlantModel, gain: FeedbackGain, spec: CostSpec, grid: TimeGrid
) -> CostateTrajectory:
    """
    Backward RK4 for Omega' = -[(A - BKL)' Omega + 2 Qx x - 2 (KL)' Ru u]
    from Omega(T) = 2 Qf x(T), reusing the forward grid.

    The state at the half steps comes from cubic Hermite interpolation of the
    stored samples and their derivatives; the attack stays piecewise linear.
    """
    if len(traj.x) != grid.n_points:
        raise ConfigurationError(
            f"trajectory has {len(traj.x)} samples, grid has {grid.n_points}", field_path="trajectory"
        )
    A_cl = closed_loop_matrix(plant, gain)
    KL = gain.K @ plant.L
    forcing = 2.0 * traj.x @ spec.Qx.T - 2.0 * traj.u @ spec.Ru.T @ KL
    terminal = 2.0 * spec.Qf @ traj.x[-1]

    delta = _attack_from_trajectory(traj, gain)
    x_dot = traj.x @ A_cl.T + delta @ plant.B.T
    x_mid = 0.5 * (traj.x[:-1] + traj.x[1:]) + grid.dt / 8.0 * (x_dot[:-1] - x_dot[1:])
    u_mid = 0.5 * (delta[:-1] + delta[1:]) - x_mid @ KL.T
    forcing_mid = 2.0 * x_mid @ spec.Qx.T - 2.0 * u_mid @ spec.Ru.T @ KL

    # In reversed time s = T - t the costate runs forward: dOmega/ds = A_cl' Omega + forcing
    reversed_omega = integrate_affine(
        A_cl.T, np.eye(plant.n), terminal, forcing[::-1], grid, midpoints=forcing_mid[::-1]
    )
    omega = reversed_omega[::-1].copy()
    omega[-1] = terminal
    return CostateTrajectory(omega=omega, adjoint=discrete_adjoint(traj, plant, gain, spec, grid))


def discrete_adjoint(
    traj: Trajectory, plant: PlantModel, gain: FeedbackGain, spec: CostSpec, grid: TimeGrid
) -> np.ndarray:
    """Multipliers lambda_i = dJ/dx_i of the RK4 step map, rows on the grid"""
    if len(traj.x) != grid.n_points:
        raise ConfigurationError(
            f"trajectory has {len(traj.x)} samples, grid has {grid.n_points}", field_path="trajectory"
        )
    M, _, _ = rk4_step_matrices(closed_loop_matrix(plant, gain), plant.B, grid.dt)
    KL = gain.K @ plant.L
    weights = trapezoid_weights(grid)
    local = weights[:, None] * (2.0 * traj.x @ spec.Qx.T - 2.0 * traj.u @ spec.Ru.T @ KL)
    terminal = local[-1] + 2.0 * spec.Qf @ traj.x[-1]

    reversed_lambda = propagate_steps(M.T, terminal, local[-2::-1])
    return reversed_lambda[::-1].copy()


def _multipliers(traj, costate, plant, gain, spec, grid) -> np.ndarray:
    _check_aligned(traj, costate, grid)
    check_gain(plant, gain)
    if costate.adjoint is not None:
        return costate.adjoint
    return discrete_adjoint(traj, plant, gain, spec, grid)


def grad_gain(
    traj: Trajectory,
    costate: CostateTrajectory,
    plant: PlantModel,
    gain: FeedbackGain,
    spec: CostSpec,
    grid: TimeGrid,
) -> GainGradient:
    """
    dJ/dK: the explicit part -sum_i w_i 2 Ru u_i z_i' plus the pull-back through
    F = A - BKL of sum_i lambda_{i+1}' (M x_i + G0 delta_i + G1 delta_{i+1})
    """
    lam = _multipliers(traj, costate, plant, gain, spec, grid)
    delta = _attack_from_trajectory(traj, gain)
    weights = trapezoid_weights(grid)
    explicit = -2.0 * spec.Ru @ (weights[:, None] * traj.u).T @ traj.z

    C_x = lam[1:].T @ traj.x[:-1]
    C_0 = lam[1:].T @ delta[:-1] @ plant.B.T
    C_1 = lam[1:].T @ delta[1:] @ plant.B.T
    F = closed_loop_matrix(plant, gain)
    M, P0, Pm, P1 = rk4_polynomials(grid.dt)
    W = (
        _polynomial_pullback(F, M, C_x)
        + _polynomial_pullback(F, P0, C_0)
        + _polynomial_pullback(F, Pm, 0.5 * (C_0 + C_1))
        + _polynomial_pullback(F, P1, C_1)
    )
    return GainGradient(G=explicit - plant.B.T @ W @ plant.L.T)


def grad_attack(
    traj: Trajectory,
    costate: CostateTrajectory,
    plant: PlantModel,
    gain: FeedbackGain,
    spec: CostSpec,
    grid: TimeGrid,
) -> AttackGradient:
    """
    dJ/d(delta_i) divided by the quadrature weight w_i, so that row i approximates
    dH/d(delta) at t_i and w_i * row i is the exact sensitivity of J to sample i
    """
    lam = _multipliers(traj, costate, plant, gain, spec, grid)
    delta = _attack_from_trajectory(traj, gain)
    weights = trapezoid_weights(grid)
    _, G0, G1 = rk4_step_matrices(closed_loop_matrix(plant, gain), plant.B, grid.dt)

    total = weights[:, None] * (2.0 * traj.u @ spec.Ru.T - 2.0 * spec.gamma * delta)
    total[:-1] += lam[1:] @ G0
    total[1:] += lam[1:] @ G1
    return AttackGradient(samples=total / weights[:, None])


def hamiltonian_attack_gradient(
    traj: Trajectory,
    costate: CostateTrajectory,
    plant: PlantModel,
    gain: FeedbackGain,
    spec: CostSpec,
) -> np.ndarray:
    """Pointwise dH/d(delta) = B' Omega + 2 Ru u - 2 gamma delta along the costate"""
    if len(traj.x) != len(costate.omega):
        raise ConfigurationError(
            f"trajectory ({len(traj.x)}) and costate ({len(costate.omega)}) are not aligned", field_path="costate"
        )
    check_gain(plant, gain)
    delta = _attack_from_trajectory(traj, gain)
    return costate.omega @ plant.B + 2.0 * traj.u @ spec.Ru.T - 2.0 * spec.gamma * delta


def verify_optimality_conditions(
    traj: Trajectory,
    costate: CostateTrajectory,
    plant: PlantModel,
    gain: FeedbackGain,
    spec: CostSpec,
    grid: TimeGrid,
) -> OptimalityReport:
    """Numerical residuals of the state equation, the costate terminal condition and stationarity in delta"""
    _check_aligned(traj, costate, grid)
    delta = _attack_from_trajectory(traj, gain)
    h_omega = traj.x @ closed_loop_matrix(plant, gain).T + delta @ plant.B.T
    x_dot = (traj.x[2:] - traj.x[:-2]) / (2.0 * grid.dt)
    state_residual = float(np.max(np.linalg.norm(x_dot - h_omega[1:-1], axis=1)))
    terminal_residual = float(np.linalg.norm(costate.omega[-1] - 2.0 * spec.Qf @ traj.x[-1]))
    gradient = hamiltonian_attack_gradient(traj, costate, plant, gain, spec)
    return OptimalityReport(
        state_residual=state_residual,
        terminal_residual=terminal_residual,
        max_interior_gradient=float(np.max(np.abs(gradient[1:-1]))),
    )


# ==============================================================================
# FINITE-DIFFERENCE VERIFICATION
# ==============================================================================

def smooth_random_attack(
    grid: TimeGrid, k: int, rng: np.random.Generator, amplitude: float = 0.5, n_modes: int = 3
) -> AttackSignal:
    """Sum of random low-frequency sinusoids sampled on the grid; the same draws give the same function on any grid"""
    frequencies = rng.uniform(0.05, 1.0, size=(n_modes, k))
    phases = rng.uniform(0.0, 2.0 * np.pi, size=(n_modes, k))
    weights = rng.uniform(-1.0, 1.0, size=(n_modes, k)) * amplitude / n_modes
    t = grid.times[:, None, None]
    samples = np.sum(weights * np.sin(frequencies * t + phases), axis=1)
    return AttackSignal(samples=samples)


def perturbed_stabilizing_gain(
    plant: PlantModel, gain: FeedbackGain, rng: np.random.Generator, scale: float = 0.3, attempts: int = 100
) -> FeedbackGain:
    for _ in range(attempts):
        candidate = FeedbackGain(K=gain.K + scale * rng.uniform(-1.0, 1.0, size=gain.K.shape))
        if is_stabilizing(plant, candidate):
            return candidate
    logger.warning("No stabilizing perturbation found; using the unperturbed gain")
    return gain


def _objective(plant, spec, grid, x0) -> Callable[[FeedbackGain, AttackSignal], float]:
    def evaluate(gain: FeedbackGain, attack: AttackSignal) -> float:
        traj = simulate_closed_loop(plant, gain, attack, x0, grid)
        return impact_effort_cost(traj, attack, spec, grid)
    return evaluate


def finite_difference_check(
    plant: PlantModel,
    spec: CostSpec,
    grid: TimeGrid,
    x0: ScenarioState,
    gain: FeedbackGain,
    attack: AttackSignal,
    n_points: int = 20,
    rng: Optional[np.random.Generator] = None,
    times: Optional[Sequence[float]] = None,
) -> GradCheckReport:
    """
    Compare adjoint gradients with central finite differences of J: every entry of K,
    and delta at n_points interior grid times. Errors are normalised by the
    infinity-norm of the finite-difference gradient.
    """
    evaluate = _objective(plant, spec, grid, x0)
    traj = simulate_closed_loop(plant, gain, attack, x0, grid)
    costate = integrate_costate(traj, plant, gain, spec, grid)
    G = grad_gain(traj, costate, plant, gain, spec, grid).G
    g_delta = grad_attack(traj, costate, plant, gain, spec, grid).samples

    G_fd = np.zeros_like(G)
    for idx in np.ndindex(*G.shape):
        step = np.zeros_like(G)
        step[idx] = GAIN_FD_STEP
        J_plus = evaluate(FeedbackGain(K=gain.K + step), attack)
        J_minus = evaluate(FeedbackGain(K=gain.K - step), attack)
        G_fd[idx] = (J_plus - J_minus) / (2.0 * GAIN_FD_STEP)
    gain_error = float(np.max(np.abs(G - G_fd)) / max(np.max(np.abs(G_fd)), 1e-12))

    if times is None:
        rng = rng if rng is not None else np.random.default_rng(0)
        indices = rng.choice(np.arange(1, grid.N), size=min(n_points, grid.N - 1), replace=False)
    else:
        indices = np.rint(np.asarray(times, dtype=float) / grid.dt).astype(int)
        if np.any(indices < 1) or np.any(indices > grid.N - 1):
            raise ConfigurationError("check times must be interior grid points", field_path="times")
    indices = np.sort(indices)

    weights = trapezoid_weights(grid)
    adjoint = weights[indices, None] * g_delta[indices]
    fd = np.zeros_like(adjoint)
    for row, i in enumerate(indices):
        for c in range(plant.k):
            samples = attack.samples.copy()
            samples[i, c] += ATTACK_FD_STEP
            J_plus = evaluate(gain, AttackSignal(samples=samples))
            samples[i, c] -= 2.0 * ATTACK_FD_STEP
            J_minus = evaluate(gain, AttackSignal(samples=samples))
            fd[row, c] = (J_plus - J_minus) / (2.0 * ATTACK_FD_STEP)
    attack_error = float(np.max(np.abs(adjoint - fd)) / max(np.max(np.abs(fd)), 1e-12))

    logger.info(f"Gradient check at dt={grid.dt:g}: worst K error {gain_error:.3e}, worst delta error {attack_error:.3e}")
    return GradCheckReport(
        worst_gain_error=gain_error,
        worst_attack_error=attack_error,
        gain_adjoint=G.tolist(),
        gain_finite_difference=G_fd.tolist(),
        attack_times=(indices * grid.dt).tolist(),
        dt=grid.dt,
    )
