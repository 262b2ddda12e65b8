"""
Nominal LQR baseline: stabilizing solution of the continuous-time algebraic Riccati
equation A'P + PA - P B R^-1 B' P + Q = 0 by Newton-Kleinman iteration.
"""
from typing import Optional
import logging

import numpy as np
from scipy.linalg import solve_continuous_lyapunov

from app.models import FeedbackGain, RiccatiSolution
from app.utils.exceptions import ConfigurationError, ConvergenceError, InfeasibilityError

logger = logging.getLogger(__name__)

MAX_ITERATIONS = 200
RESIDUAL_TOL = 1e-10
ACCEPT_TOL = 1e-8


def _is_hurwitz(M: np.ndarray) -> bool:
    return bool(np.all(np.linalg.eigvals(M).real < -1e-9))


def solve_lyapunov(F: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """Solve F' P + P F + Q = 0"""
    return solve_continuous_lyapunov(F.T, -Q)


def care_residual(A: np.ndarray, B: np.ndarray, Q: np.ndarray, R: np.ndarray, P: np.ndarray) -> float:
    residual = A.T @ P + P @ A - P @ B @ np.linalg.solve(R, B.T @ P) + Q
    return float(np.linalg.norm(residual, "fro"))


def initial_stabilizing_gain(A: np.ndarray, B: np.ndarray) -> Optional[np.ndarray]:
    """
    State-feedback gain making A - B K Hurwitz: first K = c B' for growing c, then
    the shifted-Lyapunov construction K = B' Z^-1 with
    (A + bI) Z + Z (A + bI)' = 2 B B' and b above the spectral abscissa of A.
    """
    if _is_hurwitz(A):
        return np.zeros((B.shape[1], A.shape[0]))

    c = 1.0
    for _ in range(21):
        K = c * B.T
        if _is_hurwitz(A - B @ K):
            logger.debug(f"Scalar-shift initial gain accepted at c={c:g}")
            return K
        c *= 2.0

    shift = float(np.max(np.abs(np.linalg.eigvals(A)))) + 1.0
    F = -(A + shift * np.eye(A.shape[0]))
    try:
        Z = solve_lyapunov(F.T, 2.0 * B @ B.T)
        K = B.T @ np.linalg.pinv(Z)
    except np.linalg.LinAlgError as e:
        logger.warning(f"Shifted-Lyapunov initial gain failed: {e}")
        return None
    if _is_hurwitz(A - B @ K):
        logger.debug(f"Shifted-Lyapunov initial gain accepted with shift {shift:g}")
        return K
    return None


def solve_care(A, B, Q, R) -> RiccatiSolution:
    """Stabilizing CARE solution by Newton-Kleinman iteration"""
    A, B, Q, R = (np.atleast_2d(np.asarray(m, dtype=float)) for m in (A, B, Q, R))
    n, k = B.shape
    if A.shape != (n, n) or Q.shape != (n, n) or R.shape != (k, k):
        raise ConfigurationError(
            f"inconsistent CARE shapes A{A.shape} B{B.shape} Q{Q.shape} R{R.shape}", field_path="lqr"
        )

    K = initial_stabilizing_gain(A, B)
    if K is None:
        raise InfeasibilityError("no stabilizing initial gain found; (A, B) may not be stabilizable")

    best = np.inf
    stalled = 0
    P = np.zeros((n, n))
    for iteration in range(1, MAX_ITERATIONS + 1):
        A_k = A - B @ K
        P = solve_lyapunov(A_k, Q + K.T @ R @ K)
        P = 0.5 * (P + P.T)
        K = np.linalg.solve(R, B.T @ P)

        residual = care_residual(A, B, Q, R, P)
        logger.debug(f"Newton-Kleinman iteration {iteration}: residual {residual:.3e}")
        if residual <= RESIDUAL_TOL:
            break
        if residual < 0.5 * best:
            best, stalled = residual, 0
        else:
            stalled += 1
            if stalled >= 5 and residual <= ACCEPT_TOL:
                break
    else:
        raise ConvergenceError(f"Newton-Kleinman did not converge in {MAX_ITERATIONS} iterations")

    if residual > ACCEPT_TOL:
        raise ConvergenceError(f"Riccati residual {residual:.3e} stagnated above {ACCEPT_TOL:g}")
    if not _is_hurwitz(A - B @ np.linalg.solve(R, B.T @ P)):
        raise InfeasibilityError("Riccati iteration converged to a non-stabilizing solution")

    logger.info(f"CARE solved in {iteration} iterations, residual {residual:.3e}")
    return RiccatiSolution(P=P, residual_norm=residual, iterations=iteration)


def lqr_gain(sol: RiccatiSolution, B, R) -> FeedbackGain:
    """K = R^-1 B' P"""
    B = np.atleast_2d(np.asarray(B, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    try:
        if np.linalg.cond(R) > 1e12:
            raise np.linalg.LinAlgError("R is numerically singular")
        K = np.linalg.solve(R, B.T @ sol.P)
    except np.linalg.LinAlgError as e:
        raise ConfigurationError(str(e), field_path="cost.Ru") from e
    return FeedbackGain(K=K)


def output_feedback_gain(state_gain: FeedbackGain, L) -> FeedbackGain:
    """Map a state-feedback gain onto the observed output z = L x (exact when L is invertible)"""
    L = np.atleast_2d(np.asarray(L, dtype=float))
    if L.shape[0] == L.shape[1] and np.allclose(L, np.eye(L.shape[0])):
        return state_gain
    if L.shape[0] != L.shape[1]:
        logger.warning("Observation matrix is not square; using the least-squares output gain")
    return FeedbackGain(K=state_gain.K @ np.linalg.pinv(L))
