"""
Sustainability, effort and impact-effort costs on gridded trajectories.
All integrals use the composite trapezoid rule on the shared grid.
"""
import numpy as np

from app.models import AttackSignal, CostSpec, TimeGrid, Trajectory
from app.utils.exceptions import ConfigurationError


def trapezoid_weights(grid: TimeGrid) -> np.ndarray:
    """dt at interior points, dt/2 at both endpoints"""
    weights = np.full(grid.n_points, grid.dt)
    weights[0] = weights[-1] = 0.5 * grid.dt
    return weights


def _check_dimensions(spec: CostSpec, n: int, k: int) -> None:
    if spec.Qx.shape != (n, n):
        raise ConfigurationError(f"expected {n}x{n}, got {spec.Qx.shape}", field_path="cost.Qx")
    if spec.Ru.shape != (k, k):
        raise ConfigurationError(f"expected {k}x{k}, got {spec.Ru.shape}", field_path="cost.Ru")


def running_cost(x: np.ndarray, u: np.ndarray, spec: CostSpec) -> float:
    """x' Qx x + u' Ru u"""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    u = np.atleast_1d(np.asarray(u, dtype=float))
    _check_dimensions(spec, x.shape[0], u.shape[0])
    return float(x @ spec.Qx @ x + u @ spec.Ru @ u)


def running_cost_samples(traj: Trajectory, spec: CostSpec) -> np.ndarray:
    _check_dimensions(spec, traj.x.shape[1], traj.u.shape[1])
    return (
        np.einsum("ti,ij,tj->t", traj.x, spec.Qx, traj.x)
        + np.einsum("ti,ij,tj->t", traj.u, spec.Ru, traj.u)
    )


def terminal_cost(x_final: np.ndarray, spec: CostSpec) -> float:
    return float(x_final @ spec.Qf @ x_final)


def sustainability_cost(traj: Trajectory, spec: CostSpec, grid: TimeGrid) -> float:
    """Trapezoid integral of the running cost plus x(T)' Qf x(T)"""
    if len(traj.x) != grid.n_points:
        raise ConfigurationError(
            f"trajectory has {len(traj.x)} samples, grid has {grid.n_points}", field_path="trajectory"
        )
    integral = float(trapezoid_weights(grid) @ running_cost_samples(traj, spec))
    return integral + terminal_cost(traj.x[-1], spec)


def effort_cost(attack: AttackSignal, gamma: float, grid: TimeGrid) -> float:
    """Trapezoid integral of gamma * ||delta||^2"""
    if len(attack.samples) != grid.n_points:
        raise ConfigurationError(
            f"attack has {len(attack.samples)} samples, grid has {grid.n_points}", field_path="attack"
        )
    if gamma == 0.0:
        return 0.0
    return float(gamma * (trapezoid_weights(grid) @ np.sum(attack.samples ** 2, axis=1)))


def impact_effort_cost(traj: Trajectory, attack: AttackSignal, spec: CostSpec, grid: TimeGrid) -> float:
    """J = S - E"""
    return sustainability_cost(traj, spec, grid) - effort_cost(attack, spec.gamma, grid)
