import numpy as np
import pytest

from app.models import AttackSignal, FeedbackGain, PlantModel, ScenarioState, TimeGrid
from app.services.cps_core import (
    closed_loop_matrix,
    interpolate_linear,
    is_stabilizing,
    rk4_step_matrices,
    simulate_closed_loop,
)
from app.utils.exceptions import ConfigurationError, DivergenceError
from conftest import scalar_plant


def _decay_error(dt: float) -> float:
    grid = TimeGrid(T=1.0, N=int(round(1.0 / dt)))
    traj = simulate_closed_loop(
        scalar_plant(), FeedbackGain(K=[[2.0]]), AttackSignal.zeros(grid, 1), ScenarioState(x0=[1.0]), grid
    )
    return abs(traj.x[-1, 0] - np.exp(-1.0))


def test_zero_dynamics_hold_state():
    grid = TimeGrid(T=1.0, N=100)
    traj = simulate_closed_loop(
        scalar_plant(a=0.0), FeedbackGain(K=[[0.0]]), AttackSignal.zeros(grid, 1), ScenarioState(x0=[1.0]), grid
    )
    np.testing.assert_allclose(traj.x, np.ones((101, 1)), rtol=0, atol=1e-14)
    np.testing.assert_allclose(traj.u, np.zeros((101, 1)), rtol=0, atol=1e-14)


def test_exponential_decay_matches_closed_form():
    assert _decay_error(0.01) <= 1e-8


def test_pure_integrator_of_constant_attack():
    grid = TimeGrid(T=2.0, N=200)
    traj = simulate_closed_loop(
        scalar_plant(a=0.0), FeedbackGain(K=[[0.0]]), AttackSignal.constant(grid, 0.5), ScenarioState(x0=[0.0]), grid
    )
    assert traj.x[-1, 0] == pytest.approx(1.0, abs=1e-12)


def test_rk4_fourth_order_convergence():
    coarse, medium, fine = _decay_error(0.1), _decay_error(0.05), _decay_error(0.025)
    assert coarse / medium >= 12.0
    assert medium / fine >= 12.0


def test_closed_loop_matrix_examples(ref_plant):
    np.testing.assert_array_equal(closed_loop_matrix(ref_plant, FeedbackGain(K=[[0.0, 0.0]])), ref_plant.A)
    expected = np.array([[1 - 2.52, 2 - 9.52], [1 - 1.26, 2 - 4.76]])
    np.testing.assert_allclose(closed_loop_matrix(ref_plant, FeedbackGain(K=[[1.26, 4.76]])), expected, atol=1e-12)
    assert closed_loop_matrix(scalar_plant(), FeedbackGain(K=[[2.0]]))[0, 0] == -1.0


def test_is_stabilizing_examples(ref_plant):
    assert is_stabilizing(scalar_plant(), FeedbackGain(K=[[2.0]]))
    assert not is_stabilizing(ref_plant, FeedbackGain(K=[[0.0, 0.0]]))
    assert is_stabilizing(scalar_plant(a=-1.0), FeedbackGain(K=[[0.0]]))


def test_simulation_is_affine(ref_plant, lqr_ref_gain, short_grid):
    t = short_grid.times[:, None]
    first = AttackSignal(samples=np.sin(t))
    second = AttackSignal(samples=0.3 * np.cos(2.0 * t))
    both = AttackSignal(samples=first.samples + second.samples)
    origin = ScenarioState(x0=[0.0, 0.0])

    combined = simulate_closed_loop(ref_plant, lqr_ref_gain, both, origin, short_grid).x
    separate = (
        simulate_closed_loop(ref_plant, lqr_ref_gain, first, origin, short_grid).x
        + simulate_closed_loop(ref_plant, lqr_ref_gain, second, origin, short_grid).x
    )
    np.testing.assert_allclose(combined, separate, rtol=1e-10, atol=1e-10 * np.max(np.abs(combined)))


def test_zero_attack_equivalence_is_bitwise(ref_plant, lqr_ref_gain, ref_x0, short_grid):
    a = simulate_closed_loop(ref_plant, lqr_ref_gain, AttackSignal.zeros(short_grid, 1), ref_x0, short_grid)
    b = simulate_closed_loop(
        ref_plant, lqr_ref_gain, AttackSignal(samples=np.zeros((short_grid.n_points, 1))), ref_x0, short_grid
    )
    assert np.array_equal(a.x, b.x)
    assert np.array_equal(a.u, b.u)


def test_output_and_input_identities(ref_plant, lqr_ref_gain, ref_x0, short_grid):
    attack = AttackSignal(samples=0.2 * np.sin(short_grid.times)[:, None])
    traj = simulate_closed_loop(ref_plant, lqr_ref_gain, attack, ref_x0, short_grid)
    np.testing.assert_array_equal(traj.z, traj.x @ ref_plant.L.T)
    np.testing.assert_allclose(traj.u, attack.samples - traj.z @ lqr_ref_gain.K.T, rtol=0, atol=1e-15)
    np.testing.assert_array_equal(traj.x[0], ref_x0.x0)


def test_matches_explicit_rk4_loop(ref_plant, lqr_ref_gain, ref_x0):
    grid = TimeGrid(T=2.0, N=40)
    attack = AttackSignal(samples=np.cos(grid.times)[:, None])
    traj = simulate_closed_loop(ref_plant, lqr_ref_gain, attack, ref_x0, grid)

    F = closed_loop_matrix(ref_plant, lqr_ref_gain)
    B, h = ref_plant.B, grid.dt
    delta = lambda t: interpolate_linear(attack.samples, grid, t)
    rhs = lambda t, x: F @ x + B @ delta(t)
    x = ref_x0.x0.copy()
    for i in range(grid.N):
        t = grid.times[i]
        k1 = rhs(t, x)
        k2 = rhs(t + h / 2, x + h / 2 * k1)
        k3 = rhs(t + h / 2, x + h / 2 * k2)
        k4 = rhs(t + h, x + h * k3)
        x = x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    np.testing.assert_allclose(traj.x[-1], x, rtol=1e-10, atol=1e-12)


@pytest.mark.parametrize("eps", [1e-3, 1e-5, 1e-7])
def test_near_defective_closed_loop_matches_step_recursion(eps):
    plant = PlantModel(A=[[-1.0, 1.0], [0.0, -1.0 - eps]], B=[[0.0], [1.0]], L=np.eye(2))
    gain = FeedbackGain(K=[[0.0, 0.0]])
    grid = TimeGrid(T=5.0, N=500)
    attack = AttackSignal(samples=np.cos(3.0 * grid.times)[:, None])
    traj = simulate_closed_loop(plant, gain, attack, ScenarioState(x0=[1.0, -0.5]), grid)

    M, G0, G1 = rk4_step_matrices(plant.A, plant.B, grid.dt)
    x = np.array([1.0, -0.5])
    expected = [x]
    for i in range(grid.N):
        x = M @ x + G0 @ attack.samples[i] + G1 @ attack.samples[i + 1]
        expected.append(x)
    np.testing.assert_allclose(traj.x, np.array(expected), rtol=1e-11, atol=1e-12)


def test_step_matrices_reduce_to_single_step():
    F = np.array([[0.0, 1.0], [-2.0, -0.5]])
    G = np.array([[0.0], [1.0]])
    h = 0.1
    M, G0, G1 = rk4_step_matrices(F, G, h)

    # fourth-order Taylor polynomials of exp(hF) and of its integral
    expected_M, expected_input = np.eye(2), h * np.eye(2)
    term = np.eye(2)
    for p in range(1, 5):
        term = term @ (h * F) / p
        expected_M = expected_M + term
        if p < 4:
            expected_input = expected_input + h * term / (p + 1)
    np.testing.assert_allclose(M, expected_M, rtol=1e-13, atol=1e-14)
    np.testing.assert_allclose(G0 + G1, expected_input @ G, rtol=1e-13, atol=1e-14)


def test_divergence_reports_first_bad_index():
    grid = TimeGrid(T=40.0, N=4000)
    with pytest.raises(DivergenceError) as excinfo:
        simulate_closed_loop(scalar_plant(), FeedbackGain(K=[[0.0]]), AttackSignal.zeros(grid, 1), ScenarioState(x0=[1.0]), grid)
    expected = int(np.ceil(np.log(1e12) / grid.dt))
    assert abs(excinfo.value.index - expected) <= 1
    assert excinfo.value.exit_code == 4


@pytest.mark.parametrize(
    "gain, attack_shape, x0",
    [
        ([[1.0]], (101, 1), [1.0, 1.0]),
        ([[1.0, 2.0]], (100, 1), [1.0, 1.0]),
        ([[1.0, 2.0]], (101, 1), [1.0]),
    ],
)
def test_dimension_mismatch_is_configuration_error(ref_plant, gain, attack_shape, x0):
    grid = TimeGrid(T=1.0, N=100)
    with pytest.raises(ConfigurationError):
        simulate_closed_loop(
            ref_plant, FeedbackGain(K=gain), AttackSignal(samples=np.zeros(attack_shape)), ScenarioState(x0=x0), grid
        )


def test_interpolate_linear_between_samples():
    grid = TimeGrid(T=1.0, N=2)
    samples = np.array([[0.0, 1.0], [1.0, 3.0], [3.0, 3.0]])
    np.testing.assert_allclose(interpolate_linear(samples, grid, 0.25), [0.5, 2.0])
    assert interpolate_linear(samples[:, 0], grid, 0.75) == pytest.approx(2.0)


def test_plant_rejects_inconsistent_shapes():
    with pytest.raises(ValueError):
        PlantModel(A=[[1.0, 2.0]], B=[[1.0]], L=[[1.0]])
