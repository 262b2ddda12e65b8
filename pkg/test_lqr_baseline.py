import numpy as np
import pytest
from scipy.linalg import solve_continuous_are

from app.models import AttackSignal, FeedbackGain, RiccatiSolution, ScenarioState, TimeGrid
from app.services.cost_model import sustainability_cost
from app.services.cps_core import is_stabilizing, simulate_closed_loop
from app.services.lqr_baseline import (
    care_residual,
    initial_stabilizing_gain,
    lqr_gain,
    output_feedback_gain,
    solve_care,
    solve_lyapunov,
)
from app.utils.exceptions import ConfigurationError, InfeasibilityError

REF_A = np.array([[1.0, 2.0], [1.0, 2.0]])
REF_B = np.array([[2.0], [1.0]])


@pytest.mark.parametrize("a, expected", [(0.0, 1.0), (1.0, 1.0 + np.sqrt(2.0))])
def test_scalar_riccati_roots(a, expected):
    sol = solve_care([[a]], [[1.0]], [[1.0]], [[1.0]])
    assert sol.P[0, 0] == pytest.approx(expected, abs=1e-10)
    assert sol.residual_norm <= 1e-8


def test_scalar_gains():
    assert lqr_gain(RiccatiSolution(P=[[1.0]], residual_norm=0.0), [[1.0]], [[1.0]]).K[0, 0] == 1.0
    gain = lqr_gain(RiccatiSolution(P=[[1.0 + np.sqrt(2.0)]], residual_norm=0.0), [[1.0]], [[1.0]])
    assert gain.K[0, 0] == pytest.approx(2.4142136, abs=1e-7)


def test_riccati_solution_coerces_nested_lists():
    sol = RiccatiSolution(P=[[2.0, 0.5], [0.5, 1.0]], residual_norm=0.0)
    assert isinstance(sol.P, np.ndarray)
    assert sol.P.shape == (2, 2)
    assert not sol.P.flags.writeable


def test_lyapunov_matches_nonsymmetric_stable_dynamics():
    rng = np.random.default_rng(3)
    F = 0.5 * rng.normal(size=(4, 4)) - 4.0 * np.eye(4)
    Q = np.diag([1.0, 2.0, 0.5, 3.0])
    P = solve_lyapunov(F, Q)
    np.testing.assert_allclose(F.T @ P + P @ F + Q, np.zeros((4, 4)), atol=1e-10)
    np.testing.assert_allclose(P, P.T, atol=1e-10)


def test_reference_plant_gain():
    sol = solve_care(REF_A, REF_B, np.eye(2), [[1.0]])
    K = lqr_gain(sol, REF_B, [[1.0]]).K
    np.testing.assert_allclose(K, [[1.26, 4.76]], atol=0.02)
    assert sol.residual_norm <= 1e-8
    assert np.linalg.norm(sol.P - sol.P.T) <= 1e-10
    assert np.all(np.linalg.eigvalsh(sol.P) >= -1e-10)
    assert np.all(np.linalg.eigvals(REF_A - REF_B @ K).real < 0)


@pytest.mark.parametrize(
    "A, B, Q, R",
    [
        (REF_A, REF_B, np.eye(2), np.eye(1)),
        ([[0.0, 1.0], [-1.0, 0.1]], [[0.0], [1.0]], np.diag([2.0, 0.5]), [[0.3]]),
        ([[0.5, 1.0, 0.0], [0.0, -1.0, 2.0], [1.0, 0.0, 0.2]], np.eye(3)[:, :2], np.eye(3), np.diag([1.0, 4.0])),
    ],
)
def test_matches_schur_solver(A, B, Q, R):
    A, B, Q, R = (np.asarray(m, dtype=float) for m in (A, B, Q, R))
    sol = solve_care(A, B, Q, R)
    np.testing.assert_allclose(sol.P, solve_continuous_are(A, B, Q, R), rtol=1e-8, atol=1e-8)
    assert care_residual(A, B, Q, R, sol.P) <= 1e-8


def test_lyapunov_solution_satisfies_equation():
    F = np.array([[-1.0, 3.0], [0.0, -2.0]])
    Q = np.array([[2.0, 0.5], [0.5, 1.0]])
    P = solve_lyapunov(F, Q)
    np.testing.assert_allclose(F.T @ P + P @ F + Q, np.zeros((2, 2)), atol=1e-12)


def test_initial_gain_stabilizes_reference_plant():
    K = initial_stabilizing_gain(REF_A, REF_B)
    assert K is not None
    assert np.all(np.linalg.eigvals(REF_A - REF_B @ K).real < 0)


def test_unstabilizable_plant_is_infeasible():
    with pytest.raises(InfeasibilityError) as excinfo:
        solve_care(np.eye(2), [[1.0], [0.0]], np.eye(2), [[1.0]])
    assert excinfo.value.exit_code == 2


def test_singular_input_weight_is_rejected():
    sol = RiccatiSolution(P=np.eye(2), residual_norm=0.0)
    with pytest.raises(ConfigurationError) as excinfo:
        lqr_gain(sol, REF_B, [[0.0]])
    assert excinfo.value.field_path == "cost.Ru"


def test_output_gain_maps_through_observation():
    state_gain = FeedbackGain(K=[[1.0, 2.0]])
    assert output_feedback_gain(state_gain, np.eye(2)) is state_gain
    L = np.array([[2.0, 0.0], [1.0, 1.0]])
    np.testing.assert_allclose(output_feedback_gain(state_gain, L).K @ L, state_gain.K, atol=1e-12)


def test_lqr_beats_perturbed_gains(ref_plant, ref_cost):
    grid = TimeGrid(T=30.0, N=3000)
    x0 = ScenarioState(x0=[1.0, 1.0])
    no_attack = AttackSignal.zeros(grid, 1)
    K = lqr_gain(solve_care(REF_A, REF_B, np.eye(2), [[1.0]]), REF_B, [[1.0]])
    S_lqr = sustainability_cost(simulate_closed_loop(ref_plant, K, no_attack, x0, grid), ref_cost, grid)

    rng = np.random.default_rng(7)
    checked = 0
    while checked < 50:
        direction = rng.normal(size=K.K.shape)
        radius = rng.uniform(0.05, 0.5)
        candidate = FeedbackGain(K=K.K + radius * direction / np.linalg.norm(direction))
        if not is_stabilizing(ref_plant, candidate):
            continue
        S = sustainability_cost(simulate_closed_loop(ref_plant, candidate, no_attack, x0, grid), ref_cost, grid)
        assert S_lqr <= S
        checked += 1
