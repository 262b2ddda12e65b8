"""
Closed-loop simulation of the linear plant under a feedback gain and an input attack.

The plant x' = A x + B u is driven by u = -K L x + delta.  Integration is classical
fixed-step RK4 on the shared time grid, with delta evaluated at the stage times by
piecewise-linear interpolation between grid samples.
"""
from typing import Optional, Tuple
import logging

import numpy as np
from scipy.signal import lfilter

from app.core.config import settings
from app.models import AttackSignal, FeedbackGain, PlantModel, ScenarioState, TimeGrid, Trajectory
from app.utils.exceptions import ConfigurationError, DivergenceError

logger = logging.getLogger(__name__)

# Above this eigenvector condition number the modal fast path is not trusted
_MODAL_COND_LIMIT = 1e3


def check_gain(plant: PlantModel, gain: FeedbackGain) -> None:
    if gain.K.shape != (plant.k, plant.j):
        raise ConfigurationError(
            f"gain must be {plant.k}x{plant.j}, got shape {gain.K.shape}", field_path="K"
        )


def closed_loop_matrix(plant: PlantModel, gain: FeedbackGain) -> np.ndarray:
    """Return A - B K L"""
    check_gain(plant, gain)
    return plant.A - plant.B @ gain.K @ plant.L


def closed_loop_eigenvalues(plant: PlantModel, gain: FeedbackGain) -> np.ndarray:
    return np.linalg.eigvals(closed_loop_matrix(plant, gain))


def is_stabilizing(plant: PlantModel, gain: FeedbackGain) -> bool:
    """True iff every eigenvalue of A - B K L lies strictly in the left half-plane"""
    return bool(np.all(closed_loop_eigenvalues(plant, gain).real < -1e-9))


def interpolate_linear(samples: np.ndarray, grid: TimeGrid, t: float) -> np.ndarray:
    """Piecewise-linear value of gridded samples at time t"""
    samples = np.asarray(samples, dtype=float)
    if samples.ndim == 1:
        return np.interp(t, grid.times, samples)
    return np.array([np.interp(t, grid.times, samples[:, c]) for c in range(samples.shape[1])])


def _rk4_step(F: np.ndarray, x: np.ndarray, b0: np.ndarray, bm: np.ndarray, b1: np.ndarray, h: float) -> np.ndarray:
    k1 = F @ x + b0
    k2 = F @ (x + 0.5 * h * k1) + bm
    k3 = F @ (x + 0.5 * h * k2) + bm
    k4 = F @ (x + h * k3) + b1
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def rk4_stage_matrices(F: np.ndarray, h: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """
    One RK4 step of x' = F x + b(t) as x_{i+1} = M x_i + P0 b(t_i) + Pm b(t_i + h/2) + P1 b(t_{i+1})
    """
    n = F.shape[0]
    eye, zero = np.eye(n), np.zeros((n, n))
    M = _rk4_step(F, eye, zero, zero, zero, h)
    phi_0 = _rk4_step(F, zero, eye, zero, zero, h)
    phi_m = _rk4_step(F, zero, zero, eye, zero, h)
    phi_1 = _rk4_step(F, zero, zero, zero, eye, h)
    return M, phi_0, phi_m, phi_1


def rk4_step_matrices(F: np.ndarray, G: np.ndarray, h: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Linear maps of one RK4 step of x' = F x + G w(t), w linear between samples:
    x_{i+1} = M x_i + G0 w_i + G1 w_{i+1}
    """
    M, phi_0, phi_m, phi_1 = rk4_stage_matrices(F, h)
    return M, (phi_0 + 0.5 * phi_m) @ G, (phi_1 + 0.5 * phi_m) @ G


def propagate_steps(M: np.ndarray, initial: np.ndarray, increments: np.ndarray) -> np.ndarray:
    """Solve x_{i+1} = M x_i + v_i for all i"""
    n_steps, n = increments.shape
    eigenvalues, V = np.linalg.eig(M)
    with np.errstate(over="ignore", invalid="ignore"):
        if np.linalg.cond(V) < _MODAL_COND_LIMIT:
            V_inv = np.linalg.inv(V)
            y0 = V_inv @ initial
            c = increments @ V_inv.T
            y = np.empty((n_steps + 1, n), dtype=complex)
            y[0] = y0
            for m, lam in enumerate(eigenvalues):
                y[1:, m], _ = lfilter([1.0], [1.0, -lam], c[:, m], zi=[lam * y0[m]])
            return (y @ V.T).real

        # Defective step matrix: plain recursion
        x = np.empty((n_steps + 1, n))
        x[0] = initial
        for i in range(n_steps):
            x[i + 1] = M @ x[i] + increments[i]
        return x


def _first_bad_index(values: np.ndarray) -> int:
    bad = ~np.isfinite(values) | (np.abs(values) > settings.DIVERGENCE_THRESHOLD)
    rows = np.flatnonzero(bad.any(axis=1))
    return int(rows[0]) if rows.size else -1


def integrate_affine(
    F: np.ndarray,
    G: np.ndarray,
    initial: np.ndarray,
    forcing: np.ndarray,
    grid: TimeGrid,
    midpoints: Optional[np.ndarray] = None,
) -> np.ndarray:
    """
    Fixed-step RK4 solution of x' = F x + G w(t) on the grid. w is given by its grid
    samples and, unless ``midpoints`` supplies w at the half steps, is interpolated
    linearly inside each step.
    """
    forcing = np.asarray(forcing, dtype=float)
    if midpoints is None:
        M, G0, G1 = rk4_step_matrices(F, G, grid.dt)
        increments = forcing[:-1] @ G0.T + forcing[1:] @ G1.T
    else:
        M, phi_0, phi_m, phi_1 = rk4_stage_matrices(F, grid.dt)
        increments = (
            forcing[:-1] @ (phi_0 @ G).T
            + np.asarray(midpoints, dtype=float) @ (phi_m @ G).T
            + forcing[1:] @ (phi_1 @ G).T
        )
    initial = np.asarray(initial, dtype=float)
    x = propagate_steps(M, initial, increments)
    x[0] = initial

    bad = _first_bad_index(x)
    if bad >= 0:
        raise DivergenceError(
            f"trajectory diverged at grid index {bad} (t={bad * grid.dt:.6g})", index=bad
        )
    return x


def simulate_closed_loop(
    plant: PlantModel,
    gain: FeedbackGain,
    attack: AttackSignal,
    x0: ScenarioState,
    grid: TimeGrid,
) -> Trajectory:
    """Integrate x' = (A - BKL) x + B delta from x0 and fill u, z on the grid"""
    check_gain(plant, gain)
    if attack.samples.shape != (grid.n_points, plant.k):
        raise ConfigurationError(
            f"attack must have shape {(grid.n_points, plant.k)}, got {attack.samples.shape}",
            field_path="attack",
        )
    if x0.x0.shape != (plant.n,):
        raise ConfigurationError(f"x0 must have length {plant.n}, got {x0.x0.shape[0]}", field_path="x0")

    A_cl = closed_loop_matrix(plant, gain)
    x = integrate_affine(A_cl, plant.B, x0.x0, attack.samples, grid)
    z = x @ plant.L.T
    u = attack.samples - z @ gain.K.T
    return Trajectory(x=x, u=u, z=z)
