"""
Shared fixtures: the reference two-state plant, scalar plants and short grids
"""
import numpy as np
import pytest

from app.models import CostSpec, FeedbackGain, PlantModel, ScenarioState, TimeGrid
from app.services.config_loader import parse_config
from app.services.scenario_runner import REFERENCE_PRESET


@pytest.fixture
def ref_plant() -> PlantModel:
    return PlantModel(A=[[1.0, 2.0], [1.0, 2.0]], B=[[2.0], [1.0]], L=np.eye(2))


@pytest.fixture
def ref_cost() -> CostSpec:
    return CostSpec.quadratic_default(2, 1)


@pytest.fixture
def ref_x0() -> ScenarioState:
    return ScenarioState(x0=[1.0, 1.0])


@pytest.fixture
def lqr_ref_gain() -> FeedbackGain:
    """Stabilizing gain close to the LQR optimum of the reference plant"""
    return FeedbackGain(K=[[1.2593, 4.7630]])


@pytest.fixture
def short_grid() -> TimeGrid:
    return TimeGrid(T=10.0, N=1000)


def scalar_plant(a: float = 1.0, b: float = 1.0) -> PlantModel:
    return PlantModel(A=[[a]], B=[[b]], L=[[1.0]])


def scalar_cost(qx: float = 1.0, ru: float = 1.0, qf: float = 0.0, gamma: float = 1.0) -> CostSpec:
    """Scalar weights; ru=0 bypasses validation for the degenerate cases"""
    if ru <= 0.0:
        return CostSpec.model_construct(
            Qx=np.array([[qx]]), Ru=np.array([[ru]]), Qf=np.array([[qf]]), gamma=gamma
        )
    return CostSpec(Qx=[[qx]], Ru=[[ru]], Qf=[[qf]], gamma=gamma)


@pytest.fixture
def small_config():
    """Reference scenario on a short horizon with a capped GAD run"""
    def build(**overrides):
        config = parse_config(REFERENCE_PRESET)
        update = {
            "grid": config.grid.model_copy(update={"T": 10.0, "N": 500}),
            "gad": config.gad.model_copy(
                update={"max_iters": 30, "lambda_K": 1e-3, "lambda_delta": 1e-3, "init_attack_amplitude": 0.1}
            ),
        }
        update.update(overrides)
        return config.model_copy(update=update)
    return build
