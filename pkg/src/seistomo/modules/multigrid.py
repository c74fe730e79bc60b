"""
Multigrid Module

Geometric multigrid for the shifted Helmholtz operator: bilinear/trilinear
prolongation, restriction as its plain transpose, Galerkin coarse operators,
weighted Jacobi relaxation and V/W/K cycles operating on blocks of
right-hand sides. The coarsest level is factored once with a sparse LU.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .constants import (
    DEFAULT_JACOBI_WEIGHT,
    DEFAULT_MG_LEVELS,
    DEFAULT_POST_RELAX,
    DEFAULT_PRE_RELAX,
    DEFAULT_SHIFT_FACTOR,
    K_CYCLE_INNER_ITERATIONS,
)
from .errors import FactorizationError, InvalidArgumentError
from .krylov import LinearOperatorHandle, block_fgmres

logger = logging.getLogger(__name__)

CYCLE_KINDS = ("V", "W", "K")


@dataclass(frozen=True)
class CycleSpec:
    """Cycle shape and relaxation parameters"""
    kind: str = "W"
    pre_relax: int = DEFAULT_PRE_RELAX
    post_relax: int = DEFAULT_POST_RELAX
    jacobi_weight: float = DEFAULT_JACOBI_WEIGHT
    k_inner: int = K_CYCLE_INNER_ITERATIONS

    def __post_init__(self):
        if self.kind not in CYCLE_KINDS:
            raise InvalidArgumentError(f"Unknown cycle kind '{self.kind}', expected one of {CYCLE_KINDS}")
        if self.pre_relax < 1 or self.post_relax < 1:
            raise InvalidArgumentError("Relaxation counts must be at least 1")
        if not 0 < self.jacobi_weight <= 1:
            raise InvalidArgumentError(f"Jacobi weight must lie in (0, 1], got {self.jacobi_weight}")
        if self.k_inner < 1:
            raise InvalidArgumentError("K-cycle needs at least one inner iteration")


@dataclass
class MgLevel:
    shape: Tuple[int, ...]
    operator: sp.csr_matrix = field(repr=False)
    diagonal_inverse: np.ndarray = field(repr=False)
    # Interpolation from the next coarser level onto this one
    prolongation: Optional[sp.csr_matrix] = field(default=None, repr=False)

    @property
    def restriction(self) -> Optional[sp.csr_matrix]:
        return None if self.prolongation is None else self.prolongation.T.tocsr()


def coarse_shape(shape: Sequence[int]) -> Tuple[int, ...]:
    return tuple((n - 1) // 2 + 1 for n in shape)


def check_coarsenable(shape: Sequence[int], nlevels: int) -> None:
    current = tuple(shape)
    for level in range(nlevels - 1):
        for axis, n in enumerate(current):
            if n % 2 == 0:
                raise InvalidArgumentError(
                    f"Axis {axis} has an even node count {n} on level {level}; cannot coarsen")
            if (n - 1) // 2 + 1 < 3:
                raise InvalidArgumentError(
                    f"Axis {axis} would drop below 3 nodes on level {level + 1}")
        current = coarse_shape(current)


def prolongation_1d(n_fine: int) -> sp.csr_matrix:
    """Linear interpolation from (n_fine-1)/2+1 coarse nodes to n_fine fine nodes"""
    n_coarse = (n_fine - 1) // 2 + 1
    rows, cols, vals = [], [], []
    for i in range(n_coarse):
        rows.append(2 * i)
        cols.append(i)
        vals.append(1.0)
    for i in range(n_coarse - 1):
        rows.extend([2 * i + 1, 2 * i + 1])
        cols.extend([i, i + 1])
        vals.extend([0.5, 0.5])
    return sp.csr_matrix((vals, (rows, cols)), shape=(n_fine, n_coarse))


def prolongation(shape: Sequence[int]) -> sp.csr_matrix:
    """Tensor-product interpolation, first axis fastest"""
    P = prolongation_1d(shape[0])
    for n in shape[1:]:
        P = sp.kron(prolongation_1d(n), P, format="csr")
    return P


def _jacobi_inverse(A: sp.spmatrix) -> np.ndarray:
    diag = A.diagonal()
    if np.any(diag == 0):
        raise FactorizationError("Zero diagonal entry blocks Jacobi relaxation")
    return 1.0 / diag


class MgHierarchy:
    """Galerkin hierarchy of the (shifted) operator with a factored coarsest level"""

    def __init__(self, levels: List[MgLevel], shift_factor: float = 0.0):
        self.levels = levels
        self.shift_factor = shift_factor
        coarsest = levels[-1].operator.tocsc()
        try:
            self.coarse_lu = spla.splu(coarsest)
        except RuntimeError as e:
            raise FactorizationError(f"Coarse-grid LU failed: {e}") from e
        logger.debug(f"Multigrid hierarchy with shapes {[lvl.shape for lvl in levels]}")

    @property
    def nlevels(self) -> int:
        return len(self.levels)

    @property
    def size(self) -> int:
        return self.levels[0].operator.shape[0]

    def preconditioner(self, spec: CycleSpec) -> Callable[[np.ndarray], np.ndarray]:
        """One cycle from a zero initial guess, as a preconditioner action"""
        def apply(R: np.ndarray) -> np.ndarray:
            dtype = np.result_type(R.dtype, self.levels[0].operator.dtype)
            return mg_cycle(self, spec, R, np.zeros(R.shape, dtype=dtype))
        return apply


def build_hierarchy_from_operator(A: sp.spmatrix, shape: Sequence[int], nlevels: int = DEFAULT_MG_LEVELS,
                                  shift_factor: float = 0.0) -> MgHierarchy:
    """Galerkin hierarchy for an arbitrary level-0 operator on a node grid"""
    if nlevels < 1:
        raise InvalidArgumentError("nlevels must be at least 1")
    check_coarsenable(shape, nlevels)

    A = sp.csr_matrix(A)
    levels: List[MgLevel] = []
    current = tuple(shape)
    for level in range(nlevels):
        if level == nlevels - 1:
            levels.append(MgLevel(current, A, _jacobi_inverse(A)))
            break
        P = prolongation(current)
        levels.append(MgLevel(current, A, _jacobi_inverse(A), P))
        A = (P.T @ A @ P).tocsr()
        current = coarse_shape(current)
    return MgHierarchy(levels, shift_factor)


def shifted_operator(problem, shift_factor: float) -> sp.csr_matrix:
    """Add shift_factor*omega to the attenuation: A - i*shift*omega^2*diag(m)"""
    if shift_factor == 0.0:
        return problem.matrix.copy()
    mass_shift = -1j * shift_factor * problem.omega**2 * problem.m_vector
    return (problem.matrix + sp.diags(mass_shift)).tocsr()


def build_hierarchy(problem, nlevels: int = DEFAULT_MG_LEVELS,
                    shift_factor: float = DEFAULT_SHIFT_FACTOR) -> MgHierarchy:
    """
    Build the shifted-Laplacian hierarchy for a Helmholtz problem

    Args:
        problem: HelmholtzProblem on the padded grid
        nlevels: Number of grid levels including the finest
        shift_factor: Fraction of omega added to the attenuation on level 0

    Returns:
        MgHierarchy: Level operators, transfers and the coarse LU
    """
    if shift_factor < 0:
        raise InvalidArgumentError("shift_factor must be nonnegative")
    return build_hierarchy_from_operator(shifted_operator(problem, shift_factor), problem.grid.n,
                                         nlevels, shift_factor)


def jacobi(level: MgLevel, B: np.ndarray, X: np.ndarray, sweeps: int, weight: float) -> np.ndarray:
    dinv = level.diagonal_inverse if B.ndim == 1 else level.diagonal_inverse[:, None]
    for _ in range(sweeps):
        X = X + weight * dinv * (B - level.operator @ X)
    return X


def coarse_solve(h: MgHierarchy, B_c: np.ndarray) -> np.ndarray:
    """Direct coarsest-level solve for every column with the stored factorization"""
    B_c = np.asarray(B_c)
    if B_c.shape[0] != h.levels[-1].operator.shape[0]:
        raise InvalidArgumentError("Coarse block does not match the coarsest level")
    if np.iscomplexobj(B_c) and not np.iscomplexobj(h.levels[-1].operator.data):
        return coarse_solve(h, B_c.real) + 1j * coarse_solve(h, B_c.imag)
    dtype = np.result_type(B_c.dtype, h.levels[-1].operator.dtype)
    return h.coarse_lu.solve(np.ascontiguousarray(B_c, dtype=dtype))


def _cycle(h: MgHierarchy, spec: CycleSpec, level: int, B: np.ndarray, X: np.ndarray) -> np.ndarray:
    if level == h.nlevels - 1:
        return coarse_solve(h, B)

    lvl = h.levels[level]
    X = jacobi(lvl, B, X, spec.pre_relax, spec.jacobi_weight)

    R = B - lvl.operator @ X
    R_c = lvl.prolongation.T @ R
    next_level = level + 1

    if next_level == h.nlevels - 1:
        E_c = coarse_solve(h, R_c)
    elif spec.kind == "V":
        E_c = _cycle(h, spec, next_level, R_c, np.zeros_like(R_c))
    elif spec.kind == "W":
        E_c = _cycle(h, spec, next_level, R_c, np.zeros_like(R_c))
        E_c = _cycle(h, spec, next_level, R_c, E_c)
    else:
        coarse = h.levels[next_level]
        inner = LinearOperatorHandle(
            apply=lambda V: coarse.operator @ V,
            size=coarse.operator.shape[0],
            precondition=lambda V: _cycle(h, spec, next_level, V, np.zeros_like(V)),
            stationary=False,
        )
        E_c, _ = block_fgmres(inner, R_c, restart=spec.k_inner, tol=0.0, maxit=spec.k_inner)

    X = X + lvl.prolongation @ E_c
    return jacobi(lvl, B, X, spec.post_relax, spec.jacobi_weight)


def mg_cycle(h: MgHierarchy, spec: CycleSpec, B: np.ndarray, X: np.ndarray) -> np.ndarray:
    """
    Apply one multigrid cycle to a block

    Args:
        h: Hierarchy
        spec: Cycle kind and relaxation parameters
        B: Right-hand side, (n,) or (n, k)
        X: Current iterate of the same shape

    Returns:
        np.ndarray: Updated iterate
    """
    B = np.asarray(B)
    X = np.asarray(X)
    if B.shape != X.shape or B.shape[0] != h.size:
        raise InvalidArgumentError(f"Cycle shapes {B.shape} and {X.shape} do not match operator size {h.size}")
    dtype = np.result_type(B.dtype, X.dtype, h.levels[0].operator.dtype)
    return _cycle(h, spec, 0, B.astype(dtype, copy=False), X.astype(dtype, copy=True))
