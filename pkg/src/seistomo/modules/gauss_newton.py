"""
Projected Gauss-Newton Module

Bound-constrained Gauss-Newton with an active-set split, a few
regularizer-preconditioned CG steps for the inactive update and a projected
Armijo backtracking line search.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Protocol, Union

import numpy as np

from .constants import (
    ARMIJO_CONSTANT,
    BACKTRACK_FACTOR,
    MAX_BACKTRACKS,
    PCG_ITERATIONS,
    PCG_TOL,
    RELATIVE_GRADIENT_TOL,
)
from .errors import InvalidArgumentError
from .krylov import LinearOperatorHandle, projected_pcg
from .mesh_model import RegularGrid

logger = logging.getLogger(__name__)

Bound = Union[float, np.ndarray]

FLAG_STAGNATION = "stagnation"
FLAG_CONVERGED = "converged"


class Objective(Protocol):
    def evaluate(self, m: np.ndarray) -> Any: ...

    def value(self, m: np.ndarray) -> float: ...

    def hessian_vec(self, m: np.ndarray, v: np.ndarray) -> np.ndarray: ...

    def precondition(self, v: np.ndarray) -> np.ndarray: ...


@dataclass
class GnSettings:
    """Iteration counts, line search constants and the labels stamped on history rows"""
    max_iterations: int = 5
    pcg_iterations: int = PCG_ITERATIONS
    pcg_tol: float = PCG_TOL
    armijo: float = ARMIJO_CONSTANT
    backtrack: float = BACKTRACK_FACTOR
    max_backtracks: int = MAX_BACKTRACKS
    gradient_tol: float = RELATIVE_GRADIENT_TOL

    stage: str = ""
    sweep: int = 0
    freq_batch: str = ""

    def __post_init__(self):
        if self.max_iterations < 0:
            raise InvalidArgumentError("max_iterations must be nonnegative")
        if self.pcg_iterations < 1:
            raise InvalidArgumentError("pcg_iterations must be at least 1")
        if not 0 < self.backtrack < 1:
            raise InvalidArgumentError("backtrack factor must lie in (0, 1)")
        if self.max_backtracks < 1:
            raise InvalidArgumentError("max_backtracks must be at least 1")


@dataclass
class InversionState:
    """Current model, its bounds and everything logged about how it got there"""
    m: np.ndarray
    lower: Bound
    upper: Bound
    grid: Optional[RegularGrid] = None
    history: List[Dict[str, Any]] = field(default_factory=list)
    stage_misfits: List[Dict[str, Any]] = field(default_factory=list)
    iteration: int = 0
    flags: List[str] = field(default_factory=list)
    on_iteration: Optional[Callable[["InversionState"], None]] = field(default=None, repr=False)

    def __post_init__(self):
        self.m = np.array(self.m, dtype=np.float64).ravel(order="F")
        lower = np.broadcast_to(np.asarray(self.lower, dtype=np.float64), self.m.shape)
        upper = np.broadcast_to(np.asarray(self.upper, dtype=np.float64), self.m.shape)
        if np.any(lower > upper):
            raise InvalidArgumentError("Lower bound exceeds upper bound")
        if np.any(self.m < lower) or np.any(self.m > upper):
            logger.warning("Starting model violates its bounds; projecting onto the box")
            self.m = np.clip(self.m, lower, upper)

    def project(self, m: np.ndarray) -> np.ndarray:
        return np.clip(m, self.lower, self.upper)

    def active_set(self, gradient: np.ndarray) -> np.ndarray:
        """At a bound with the gradient pushing outward; on-bound zero-gradient points stay inactive"""
        return ((self.m <= self.lower) & (gradient > 0)) | ((self.m >= self.upper) & (gradient < 0))


def _direction(objective: Objective, state: InversionState, gradient: np.ndarray, active: np.ndarray,
               settings: GnSettings) -> np.ndarray:
    inactive = ~active
    m = state.m.copy()
    op = LinearOperatorHandle(apply=lambda v: objective.hessian_vec(m, v), size=m.size, dtype=np.float64)
    dm, report = projected_pcg(op, -gradient, objective.precondition, inactive,
                               tol=settings.pcg_tol, maxit=settings.pcg_iterations)
    if not np.any(dm[inactive]) or gradient @ dm >= 0:
        logger.warning(f"GN direction unusable ({report.flag or 'no descent'}); taking a steepest-descent step")
        dm = np.where(inactive, -gradient, 0.0)

    if np.any(active):
        g_active = np.abs(gradient[active]).max()
        scale = np.abs(dm[inactive]).max() / g_active if np.any(inactive) and g_active > 0 else 1.0
        dm[active] = -scale * gradient[active]
    return dm


def _components(objective: Objective, m: np.ndarray, total: float) -> Dict[str, float]:
    if hasattr(objective, "components"):
        return objective.components(m)
    return {"phi_total": total}


def _record(state: InversionState, settings: GnSettings, components: Dict[str, float],
            step: float, active_count: int) -> None:
    state.iteration += 1
    row = {
        "iter": state.iteration,
        "stage": settings.stage,
        "sweep": settings.sweep,
        "freq_batch": settings.freq_batch,
        "phi_fwi": components.get("phi_fwi", 0.0),
        "phi_eik": components.get("phi_eik", 0.0),
        "phi_reg": components.get("phi_reg", 0.0),
        "phi_total": components.get("phi_total", 0.0),
        "step_length": step,
        "active_count": active_count,
    }
    state.history.append(row)
    logger.info(f"GN {state.iteration} [{settings.stage} sweep {settings.sweep} batch {settings.freq_batch}]: "
                f"phi={row['phi_total']:.6e} step={step:g} active={active_count}")
    if state.on_iteration is not None:
        state.on_iteration(state)


def projected_gauss_newton(state: InversionState, objective: Objective,
                           settings: Optional[GnSettings] = None) -> InversionState:
    """
    Run projected Gauss-Newton iterations on one objective

    Args:
        state: Model and bounds, updated in place
        objective: Provides evaluate, value, hessian_vec and precondition
        settings: Iteration counts and row labels

    Returns:
        InversionState: The same state with the final model and new history rows
    """
    settings = settings or GnSettings()
    if settings.max_iterations == 0:
        return state

    current = objective.evaluate(state.m)
    f, gradient = float(current.total), current.gradient
    reference_norm = None

    for iteration in range(settings.max_iterations):
        active = state.active_set(gradient)
        projected = np.where(active, 0.0, gradient)
        norm = float(np.linalg.norm(projected))
        if reference_norm is None:
            reference_norm = norm
        if norm == 0.0 or norm <= settings.gradient_tol * reference_norm:
            logger.info(f"Projected gradient reduced to {norm:.3e}; stopping")
            state.flags.append(FLAG_CONVERGED)
            break

        dm = _direction(objective, state, gradient, active, settings)

        mu = 1.0
        accepted = None
        for trial in range(settings.max_backtracks):
            m_try = state.project(state.m + mu * dm)
            f_try = float(objective.value(m_try))
            if f_try <= f + settings.armijo * float(gradient @ (m_try - state.m)) and f_try <= f:
                accepted = (m_try, f_try)
                break
            logger.debug(f"Line search trial {trial}: phi={f_try:.6e} rejected at step {mu:g}")
            mu *= settings.backtrack

        if accepted is None:
            logger.warning(f"Line search failed after {settings.max_backtracks} trials; model left unchanged")
            state.flags.append(FLAG_STAGNATION)
            _record(state, settings, _components(objective, state.m, f), 0.0, int(active.sum()))
            break

        state.m, f = accepted
        _record(state, settings, _components(objective, state.m, f), mu, int(active.sum()))

        if iteration + 1 < settings.max_iterations:
            current = objective.evaluate(state.m)
            f, gradient = float(current.total), current.gradient

    return state
