"""
Regularizers Module

Quadratic smoothness penalties on the core grid:

    R1_biharmonic:  R(m) = ||L (m - m_ref)||^2   (L the Neumann Laplacian)
    R2_gradient:    R(m) = ||G (m - m_ref)||^2   (G the forward-difference gradient)

Both operators annihilate constants. Values are taken in s^2/km^2 over km
spacings and weighted by the cell volume so that alpha values transfer
between grid resolutions.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Tuple

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .constants import (
    DEFAULT_MG_LEVELS,
    REG_DIRECT_MAX_NODES,
    REG_LENGTH_SCALE,
    REG_MODEL_SCALE,
    REG_SHIFT_FRACTION,
)
from .errors import FactorizationError, InvalidArgumentError
from .krylov import LinearOperatorHandle, pcg
from .mesh_model import RegularGrid
from .multigrid import CycleSpec, build_hierarchy_from_operator

logger = logging.getLogger(__name__)

REG_KINDS = ("R1_biharmonic", "R2_gradient")


def forward_difference(n: int, h: float) -> sp.csr_matrix:
    """(n-1) x n first difference divided by h"""
    return sp.diags([-np.ones(n - 1), np.ones(n - 1)], [0, 1], shape=(n - 1, n), format="csr") / h


def gradient_operator(grid: RegularGrid, length_scale: float = REG_LENGTH_SCALE) -> sp.csr_matrix:
    """Stacked per-axis forward differences, first axis fastest"""
    blocks = []
    for k in range(grid.ndim):
        before = math.prod(grid.n[:k])
        after = math.prod(grid.n[k + 1:])
        D = forward_difference(grid.n[k], grid.h[k] * length_scale)
        blocks.append(sp.kron(sp.identity(after), sp.kron(D, sp.identity(before))))
    return sp.vstack(blocks, format="csr")


def neumann_laplacian(grid: RegularGrid, length_scale: float = REG_LENGTH_SCALE) -> sp.csr_matrix:
    """-G^T G: the 5/7-point Laplacian with mirrored boundary nodes"""
    G = gradient_operator(grid, length_scale)
    return (-(G.T @ G)).tocsr()


@dataclass
class RegularizerConfig:
    kind: str = "R2_gradient"
    alpha: float = 0.0
    m_ref: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in REG_KINDS:
            raise InvalidArgumentError(f"Unknown regularizer '{self.kind}', expected one of {REG_KINDS}")
        if self.alpha < 0:
            raise InvalidArgumentError("Regularization weight alpha must be nonnegative")


class Regularizer:
    """Assembled penalty operator K with R(m) = ||K (m - m_ref)||^2"""

    def __init__(self, grid: RegularGrid, config: RegularizerConfig,
                 model_scale: float = REG_MODEL_SCALE, length_scale: float = REG_LENGTH_SCALE):
        self.grid = grid
        self.config = config
        if config.kind == "R1_biharmonic":
            K = neumann_laplacian(grid, length_scale)
        else:
            K = gradient_operator(grid, length_scale)
        volume = math.prod(hk * length_scale for hk in grid.h)
        self.K = (K * (model_scale * math.sqrt(volume))).tocsr()
        self.hessian = (2.0 * (self.K.T @ self.K)).tocsr()
        self._preconditioner: Optional["RegularizerPreconditioner"] = None

        if config.m_ref is None:
            self.m_ref = np.zeros(grid.size)
        else:
            m_ref = np.asarray(config.m_ref, dtype=np.float64)
            if m_ref.size != grid.size:
                raise InvalidArgumentError(f"Reference model of size {m_ref.size} does not match grid {grid.n}")
            self.m_ref = m_ref.ravel(order="F") if m_ref.shape == grid.n else m_ref.ravel()

    @property
    def kind(self) -> str:
        return self.config.kind

    @property
    def alpha(self) -> float:
        return self.config.alpha

    def _as_vector(self, m: np.ndarray) -> np.ndarray:
        m = np.asarray(m, dtype=np.float64)
        if m.size != self.grid.size:
            raise InvalidArgumentError(f"Model of size {m.size} does not match regularizer grid {self.grid.n}")
        return m.ravel(order="F") if m.shape == self.grid.n else m.ravel()

    def value(self, m: np.ndarray) -> float:
        r = self.K @ (self._as_vector(m) - self.m_ref)
        return float(r @ r)

    def gradient(self, m: np.ndarray) -> np.ndarray:
        return self.hessian @ (self._as_vector(m) - self.m_ref)

    def hessian_vec(self, v: np.ndarray) -> np.ndarray:
        return self.hessian @ self._as_vector(v)

    def preconditioner(self) -> "RegularizerPreconditioner":
        if self._preconditioner is None:
            self._preconditioner = RegularizerPreconditioner(self)
        return self._preconditioner


def regularizer_eval(reg: Regularizer, m: np.ndarray) -> Tuple[float, np.ndarray, Callable[[np.ndarray], np.ndarray]]:
    """
    Evaluate an (unweighted) regularizer

    Args:
        reg: Assembled regularizer on the core grid
        m: Model vector or grid-shaped array

    Returns:
        Tuple of the value, the gradient and a Hessian-product handle
    """
    return reg.value(m), reg.gradient(m), reg.hessian_vec


class RegularizerPreconditioner:
    """
    Action of (alpha * H_R + delta I)^{-1}, the GN preconditioner

    delta is a small fraction of the mean diagonal, which lifts the constant
    null space. Small grids are factored; larger ones use multigrid-
    preconditioned CG. alpha = 0 gives the identity.
    """

    def __init__(self, reg: Regularizer, alpha: Optional[float] = None,
                 direct_max_nodes: int = REG_DIRECT_MAX_NODES, tol: float = 1e-10, maxit: int = 200):
        self.alpha = reg.alpha if alpha is None else float(alpha)
        self.tol = tol
        self.maxit = maxit
        self._lu = None
        self._op: Optional[LinearOperatorHandle] = None
        if self.alpha <= 0:
            return

        H = self.alpha * reg.hessian
        delta = REG_SHIFT_FRACTION * float(H.diagonal().mean())
        if delta <= 0:
            delta = REG_SHIFT_FRACTION
        self.matrix = (H + delta * sp.identity(reg.grid.size)).tocsr()

        if reg.grid.size <= direct_max_nodes:
            try:
                self._lu = spla.splu(self.matrix.tocsc())
            except RuntimeError as e:
                raise FactorizationError(f"Regularizer factorization failed: {e}") from e
            logger.debug(f"Factored {reg.kind} preconditioner on {reg.grid.n}")
            return

        precondition = None
        try:
            hierarchy = build_hierarchy_from_operator(self.matrix, reg.grid.n, DEFAULT_MG_LEVELS)
            precondition = hierarchy.preconditioner(CycleSpec("V"))
        except InvalidArgumentError as e:
            logger.warning(f"Regularizer multigrid unavailable ({e}); using Jacobi-preconditioned CG")
            dinv = 1.0 / self.matrix.diagonal()
            precondition = lambda v: dinv * v  # noqa: E731
        self._op = LinearOperatorHandle(apply=lambda v: self.matrix @ v, size=reg.grid.size,
                                        dtype=np.float64, precondition=precondition)

    def __call__(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64)
        if self.alpha <= 0:
            return v.copy()
        if self._lu is not None:
            return self._lu.solve(v)
        x, report = pcg(self._op, v, lambda r: np.real(self._op.precondition(r)), tol=self.tol, maxit=self.maxit)
        if not report.all_converged:
            logger.debug(f"Regularizer inner solve stopped at residual {report.relative_residuals[0]:.2e}")
        return x
