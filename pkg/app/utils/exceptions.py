from typing import Optional


class AttackSynthesisError(Exception):
    """Base class for every failure raised by the attack synthesis pipeline"""
    exit_code = 1


class ConfigurationError(AttackSynthesisError):
    """Raised when inputs are malformed, inconsistent or violate an invariant"""
    exit_code = 2

    def __init__(self, message: str, field_path: Optional[str] = None):
        self.field_path = field_path
        if field_path:
            message = f"{field_path}: {message}"
        super().__init__(message)


class DivergenceError(AttackSynthesisError):
    """Raised when an integrated trajectory blows up"""
    exit_code = 4

    def __init__(self, message: str, index: int, iteration: Optional[int] = None):
        self.index = index
        self.iteration = iteration
        if iteration is not None:
            message = f"iteration {iteration}: {message}"
        super().__init__(message)


class InfeasibilityError(AttackSynthesisError):
    """Raised when no admissible solution exists (unstabilizable plant, unreachable alpha)"""
    exit_code = 2


class ConvergenceError(AttackSynthesisError):
    """Raised when an iterative solver hits its iteration cap"""
    exit_code = 3


class StepFailureError(AttackSynthesisError):
    """Raised when every backtracking step of a descent update is rejected"""
    exit_code = 3

    def __init__(self, message: str, iteration: int):
        self.iteration = iteration
        super().__init__(f"iteration {iteration}: {message}")
