"""
Pydantic models for the plant, signals, solver settings and reports
"""
from typing import Any, List, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from app.core.config import settings


def as_array(value: Any, ndim: int, name: str) -> np.ndarray:
    """Coerce ``value`` to a read-only float array of the given rank"""
    arr = np.array(value, dtype=float)
    if ndim == 2 and arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif ndim == 1 and arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim != ndim:
        raise ValueError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if arr.size == 0:
        raise ValueError(f"{name} must not be empty")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    arr.setflags(write=False)
    return arr


def check_symmetric_psd(matrix: np.ndarray, name: str, strict: bool = False) -> None:
    if matrix.shape[0] != matrix.shape[1]:
        raise ValueError(f"{name} must be square, got shape {matrix.shape}")
    if not np.allclose(matrix, matrix.T, rtol=0.0, atol=1e-10):
        raise ValueError(f"{name} must be symmetric")
    eigenvalues = np.linalg.eigvalsh(matrix)
    if strict and eigenvalues.min() <= 1e-12:
        raise ValueError(f"{name} must be positive definite (min eigenvalue {eigenvalues.min():.3g})")
    if not strict and eigenvalues.min() < -1e-10:
        raise ValueError(f"{name} must be positive semidefinite (min eigenvalue {eigenvalues.min():.3g})")


class NumericModel(BaseModel):
    """Immutable model holding numpy arrays"""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)


# ==============================================================================
# PLANT AND SIGNALS
# ==============================================================================

class PlantModel(NumericModel):
    """Linear plant x' = A x + B u observed through z = L x"""
    A: np.ndarray
    B: np.ndarray
    L: np.ndarray

    @field_validator("A", "B", "L", mode="before")
    @classmethod
    def _matrix(cls, value, info):
        return as_array(value, 2, info.field_name)

    @model_validator(mode="after")
    def _shapes(self):
        n = self.A.shape[0]
        if self.A.shape != (n, n):
            raise ValueError(f"A must be square, got shape {self.A.shape}")
        if self.B.shape[0] != n:
            raise ValueError(f"B must have {n} rows, got shape {self.B.shape}")
        if self.L.shape[1] != n:
            raise ValueError(f"L must have {n} columns, got shape {self.L.shape}")
        return self

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def k(self) -> int:
        return self.B.shape[1]

    @property
    def j(self) -> int:
        return self.L.shape[0]


class FeedbackGain(NumericModel):
    K: np.ndarray

    @field_validator("K", mode="before")
    @classmethod
    def _matrix(cls, value):
        return as_array(value, 2, "K")


class TimeGrid(NumericModel):
    """Uniform grid t_i = i*dt, i = 0..N, over [0, T]"""
    T: float = Field(gt=0)
    N: int = Field(ge=2)

    @property
    def dt(self) -> float:
        return self.T / self.N

    @property
    def n_points(self) -> int:
        return self.N + 1

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.N + 1) * self.dt


class ScenarioState(NumericModel):
    x0: np.ndarray

    @field_validator("x0", mode="before")
    @classmethod
    def _vector(cls, value):
        return as_array(value, 1, "x0")


class AttackSignal(NumericModel):
    """Attack samples, row i is delta(t_i)"""
    samples: np.ndarray

    @field_validator("samples", mode="before")
    @classmethod
    def _samples(cls, value):
        arr = np.array(value, dtype=float)
        if arr.ndim == 1:
            arr = arr.reshape(-1, 1)
        return as_array(arr, 2, "samples")

    @classmethod
    def zeros(cls, grid: TimeGrid, k: int) -> "AttackSignal":
        return cls(samples=np.zeros((grid.n_points, k)))

    @classmethod
    def constant(cls, grid: TimeGrid, value) -> "AttackSignal":
        value = np.atleast_1d(np.asarray(value, dtype=float))
        return cls(samples=np.tile(value, (grid.n_points, 1)))

    def scaled(self, mu) -> "AttackSignal":
        mu = np.asarray(mu, dtype=float)
        if mu.ndim == 1:
            mu = mu[:, None]
        return AttackSignal(samples=mu * self.samples)

    @property
    def k(self) -> int:
        return self.samples.shape[1]


class Trajectory(NumericModel):
    """Gridded closed-loop samples: state x, applied input u = -KLx + delta, output z = Lx"""
    x: np.ndarray
    u: np.ndarray
    z: np.ndarray

    @model_validator(mode="after")
    def _lengths(self):
        if not (len(self.x) == len(self.u) == len(self.z)):
            raise ValueError("x, u and z must have the same number of samples")
        return self


# ==============================================================================
# COSTS AND RICCATI
# ==============================================================================

class CostSpec(NumericModel):
    """Quadratic running weights Qx, Ru, terminal weight Qf and effort weight gamma"""
    Qx: np.ndarray
    Ru: np.ndarray
    Qf: np.ndarray
    gamma: float = Field(default=1.0, ge=0)

    @field_validator("Qx", "Qf", mode="before")
    @classmethod
    def _psd(cls, value, info):
        arr = as_array(value, 2, info.field_name)
        check_symmetric_psd(arr, info.field_name)
        return arr

    @field_validator("Ru", mode="before")
    @classmethod
    def _pd(cls, value):
        arr = as_array(value, 2, "Ru")
        check_symmetric_psd(arr, "Ru", strict=True)
        return arr

    @model_validator(mode="after")
    def _shapes(self):
        if self.Qx.shape != self.Qf.shape:
            raise ValueError(f"Qf shape {self.Qf.shape} does not match Qx shape {self.Qx.shape}")
        return self

    @classmethod
    def quadratic_default(cls, n: int, k: int, gamma: float = 1.0) -> "CostSpec":
        return cls(Qx=np.eye(n), Ru=np.eye(k), Qf=np.zeros((n, n)), gamma=gamma)


class RiccatiSolution(NumericModel):
    P: np.ndarray
    residual_norm: float = Field(ge=0)
    iterations: int = 0

    @field_validator("P", mode="before")
    @classmethod
    def _matrix(cls, value):
        return as_array(value, 2, "P")


# ==============================================================================
# ADJOINT
# ==============================================================================

class CostateTrajectory(NumericModel):
    """
    Costate samples, row i is Omega(t_i). ``adjoint`` row i is dJ/dx_i of the
    discretized cost, the multiplier the exact gradients are assembled from.
    """
    omega: np.ndarray
    adjoint: Optional[np.ndarray] = None

    @field_validator("omega", mode="before")
    @classmethod
    def _omega(cls, value):
        return as_array(value, 2, "omega")

    @field_validator("adjoint", mode="before")
    @classmethod
    def _adjoint(cls, value):
        return None if value is None else as_array(value, 2, "adjoint")


class GainGradient(NumericModel):
    G: np.ndarray

    @field_validator("G", mode="before")
    @classmethod
    def _matrix(cls, value):
        return as_array(value, 2, "G")


class AttackGradient(NumericModel):
    """dJ/d(delta) per unit quadrature weight, row i at t_i"""
    samples: np.ndarray

    @field_validator("samples", mode="before")
    @classmethod
    def _samples(cls, value):
        return as_array(value, 2, "samples")


class OptimalityReport(BaseModel):
    state_residual: float
    terminal_residual: float
    max_interior_gradient: float


class GradCheckReport(BaseModel):
    worst_gain_error: float
    worst_attack_error: float
    gain_adjoint: List[List[float]]
    gain_finite_difference: List[List[float]]
    attack_times: List[float]
    dt: float
    tolerance: float = 1e-3

    @property
    def passed(self) -> bool:
        return self.worst_gain_error <= self.tolerance and self.worst_attack_error <= self.tolerance


# ==============================================================================
# SOLVERS
# ==============================================================================

class GadConfig(BaseModel):
    """Gradient ascent-descent hyperparameters"""
    model_config = ConfigDict(extra="forbid", frozen=True)

    lambda_K: float = Field(default=1e-3, ge=0)
    lambda_delta: float = Field(default=1e-2, ge=0)
    eta: float = Field(default=1e-6, gt=0)
    max_iters: int = Field(default=5000, ge=1)
    # The eta test is not applied before this many iterations
    min_iters: int = Field(default=3, ge=1)
    delta_max: float = Field(default=10.0, gt=0)
    backtrack_max: int = Field(default=20, ge=0)
    stale_costate: bool = False
    seed: int = Field(default_factory=lambda: settings.DEFAULT_SEED)
    # Amplitude of the seeded random attack the pipeline starts from (0 starts from zero)
    init_attack_amplitude: float = Field(default=0.1, ge=0)


class GadResult(NumericModel):
    K0: FeedbackGain
    delta_unscaled: AttackSignal
    J_history: List[float]
    iterations: int
    converged: bool
    backtracks: int = 0
    seed: Optional[int] = None
    delta_max: float = 10.0


class MaximumPrincipleReport(BaseModel):
    worst_violation: float
    violations: int
    max_interior_gradient: float
    checked_times: int
    checked_perturbations: int
    gradient_tolerance: float = 1e-3

    @property
    def passed(self) -> bool:
        return self.violations == 0 and self.max_interior_gradient <= self.gradient_tolerance


class StealthConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    alpha: float = Field(default=0.003, gt=0)
    mode: Literal["constant_mu", "pointwise_greedy"] = "constant_mu"
    bisection_tol: float = Field(default=1e-4, gt=0, lt=0.1)


class StealthResult(NumericModel):
    mu: Union[float, np.ndarray]
    delta_final: AttackSignal
    residual: np.ndarray
    sup_residual: float

    @property
    def mu0(self) -> float:
        """Scalar summary of the scaling profile (its minimum in pointwise mode)"""
        return float(np.min(self.mu))


# ==============================================================================
# SCENARIO DOCUMENT
# ==============================================================================

class ConfigBlock(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class PlantBlock(ConfigBlock):
    n: int = Field(ge=1)
    k: int = Field(ge=1)
    j: int = Field(ge=1)
    A: List[List[float]]
    B: List[List[float]]
    L: List[List[float]]

    @model_validator(mode="after")
    def _declared_dimensions(self):
        for name, rows, cols in (("A", self.n, self.n), ("B", self.n, self.k), ("L", self.j, self.n)):
            matrix = getattr(self, name)
            if len(matrix) != rows or any(len(row) != cols for row in matrix):
                raise ValueError(f"{name} must be {rows}x{cols} for declared dimensions (n={self.n}, k={self.k}, j={self.j})")
        return self

    def to_plant(self) -> PlantModel:
        return PlantModel(A=self.A, B=self.B, L=self.L)


class GridBlock(ConfigBlock):
    T: float = Field(default=100.0, gt=0)
    N: int = Field(default=10000, ge=2)

    def to_grid(self) -> TimeGrid:
        return TimeGrid(T=self.T, N=self.N)


class CostBlock(ConfigBlock):
    Qx: Optional[List[List[float]]] = None
    Ru: Optional[List[List[float]]] = None
    Qf: Optional[List[List[float]]] = None
    gamma: float = Field(default=1.0, ge=0)

    @field_validator("Qx", "Qf")
    @classmethod
    def _psd(cls, value, info):
        if value is not None:
            check_symmetric_psd(as_array(value, 2, info.field_name), info.field_name)
        return value

    @field_validator("Ru")
    @classmethod
    def _pd(cls, value):
        if value is not None:
            check_symmetric_psd(as_array(value, 2, "Ru"), "Ru", strict=True)
        return value

    def to_cost(self, n: int, k: int) -> CostSpec:
        return CostSpec(
            Qx=self.Qx if self.Qx is not None else np.eye(n),
            Ru=self.Ru if self.Ru is not None else np.eye(k),
            Qf=self.Qf if self.Qf is not None else np.zeros((n, n)),
            gamma=self.gamma,
        )


class OutputsBlock(ConfigBlock):
    directory: str = "results"
    emit_trajectory: bool = True


class ScenarioConfig(ConfigBlock):
    """A complete scenario document"""
    name: str = "scenario"
    plant: PlantBlock
    x0: List[float]
    grid: GridBlock = GridBlock()
    cost: CostBlock = CostBlock()
    gad: GadConfig = GadConfig()
    stealth: StealthConfig = StealthConfig()
    outputs: OutputsBlock = OutputsBlock()

    @model_validator(mode="after")
    def _consistent(self):
        n, k = self.plant.n, self.plant.k
        if len(self.x0) != n:
            raise ValueError(f"x0 must have length n={n}, got {len(self.x0)}")
        for name, size in (("Qx", n), ("Ru", k), ("Qf", n)):
            matrix = getattr(self.cost, name)
            if matrix is not None and (len(matrix) != size or any(len(row) != size for row in matrix)):
                raise ValueError(f"cost.{name} must be {size}x{size}")
        return self

    def plant_model(self) -> PlantModel:
        return self.plant.to_plant()

    def time_grid(self) -> TimeGrid:
        return self.grid.to_grid()

    def cost_spec(self) -> CostSpec:
        return self.cost.to_cost(self.plant.n, self.plant.k)

    def initial_state(self) -> ScenarioState:
        return ScenarioState(x0=self.x0)


# ==============================================================================
# REPORTS
# ==============================================================================

class NominalSummary(BaseModel):
    K_lqr: List[List[float]]
    S_nominal: float
    J_nominal: float
    riccati_residual: float


class AttackSummary(BaseModel):
    K0: List[List[float]]
    mu0: float
    sup_residual: float
    S_attack: float
    E_attack: float
    J_attack: float
    E_unscaled: float
    iterations: int
    converged: bool
    percent_S_increase: float
    settled_state: List[float]
    settled_attack: float
    settled_input: List[float]
    settled_input_plus_attack: List[float]
    closed_loop_real_parts: List[float]
    max_principle_violation: Optional[float] = None


class Provenance(BaseModel):
    config_hash: str
    seed: int
    grid: GridBlock
    tool_version: str


class SummaryReport(BaseModel):
    nominal: NominalSummary
    attack: Optional[AttackSummary] = None
    provenance: Provenance


class SweepRow(BaseModel):
    value: float
    S_attack: Optional[float] = None
    E_attack: Optional[float] = None
    E_unscaled: Optional[float] = None
    mu0: Optional[float] = None
    percent_S_increase: Optional[float] = None
    error: Optional[str] = None


# ==============================================================================
# PIPELINE RESULTS
# ==============================================================================

class NominalRun(NumericModel):
    gain: FeedbackGain
    riccati: RiccatiSolution
    traj: Trajectory
    summary: NominalSummary


class AttackRun(NumericModel):
    gad: GadResult
    stealth: StealthResult
    traj: Trajectory
    summary: AttackSummary
