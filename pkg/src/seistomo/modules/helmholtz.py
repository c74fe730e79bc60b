"""
Helmholtz Module

Second-order Helmholtz operator with attenuation and an absorbing layer,
multi-source forward solves, the FWI sensitivity products and the Ricker
source wavelet.

The discrete operator is

    A(m, w) = Lap_h + diag(w^2 m - i w gamma m)

with the truncated 5/7-point Laplacian (homogeneous Dirichlet outside the
padded grid). A is complex symmetric, so transposed solves reuse the same
hierarchy or factorization.
"""

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .constants import (
    DEFAULT_JACOBI_WEIGHT,
    DEFAULT_MG_LEVELS,
    DEFAULT_POST_RELAX,
    DEFAULT_PRE_RELAX,
    DEFAULT_SHIFT_FACTOR,
    DEFAULT_SOLVER_MAXIT,
    DEFAULT_SOLVER_TOL,
    DENSE_LU_MAX_NODES,
    FGMRES_RESTART,
    MIN_POINTS_PER_WAVELENGTH,
)
from .errors import ConvergenceError, InvalidArgumentError, StateError
from .krylov import LinearOperatorHandle, SolveReport, block_bicgstab, block_fgmres
from .mesh_model import PaddedModel, RegularGrid, SamplingOperator, SlownessSquaredModel, sample, sample_adjoint
from .multigrid import CycleSpec, MgHierarchy, build_hierarchy

logger = logging.getLogger(__name__)

SOLVER_METHODS = ("mg_bicgstab", "mg_fgmres_w", "mg_fgmres_k", "dense_lu_small")
PRECISIONS = ("full", "compact")


def laplacian_1d(n: int, h: float) -> sp.csr_matrix:
    """Second difference with the truncated stencil at both ends"""
    return sp.diags([np.ones(n - 1), -2.0 * np.ones(n), np.ones(n - 1)], [-1, 0, 1], format="csr") / (h * h)


def laplacian(grid: RegularGrid) -> sp.csr_matrix:
    L = sp.csr_matrix((grid.size, grid.size))
    for k in range(grid.ndim):
        before = math.prod(grid.n[:k])
        after = math.prod(grid.n[k + 1:])
        term = sp.kron(sp.identity(after), sp.kron(laplacian_1d(grid.n[k], grid.h[k]), sp.identity(before)))
        L = L + term
    return L.tocsr()


@dataclass(frozen=True)
class AttenuationField:
    """Base attenuation plus an absorbing ramp whose height scales with frequency"""
    grid: RegularGrid
    base: float
    layer_width: int
    profile: np.ndarray = field(repr=False)
    strength: float = 1.0

    def gamma(self, omega: float) -> np.ndarray:
        """Flattened attenuation (rad/s) at angular frequency omega; ramp peak = strength*omega"""
        return self.base + self.strength * omega * self.profile


def assemble_attenuation(grid: RegularGrid,
                         base_gamma: float,
                         layer_width: int,
                         free_surface: bool = True,
                         strength: float = 1.0) -> AttenuationField:
    """
    Build the attenuation field with quadratic absorbing ramps

    Args:
        grid: Padded grid
        base_gamma: Physical attenuation everywhere (rad/s)
        layer_width: Ramp depth in nodes on every absorbing side
        free_surface: Leave the low side of the last (depth) axis without a ramp
        strength: Ramp peak as a multiple of omega

    Returns:
        AttenuationField: Profile normalized to [0, ...] plus base
    """
    if base_gamma < 0:
        raise InvalidArgumentError("Base attenuation must be nonnegative")
    if layer_width < 0:
        raise InvalidArgumentError("Layer width must be nonnegative")

    profile = np.zeros(grid.n)
    if layer_width > 0:
        for k in range(grid.ndim):
            if 2 * layer_width >= grid.n[k]:
                raise InvalidArgumentError(
                    f"Layer width {layer_width} is not smaller than half of axis {k} ({grid.n[k]} nodes)")
            idx = np.arange(grid.n[k], dtype=np.float64)
            ramp = np.zeros(grid.n[k])
            sides = [idx, grid.n[k] - 1 - idx]
            if free_surface and k == grid.ndim - 1:
                sides = sides[1:]
            for depth in sides:
                inside = depth < layer_width
                ramp[inside] += ((layer_width - depth[inside]) / layer_width) ** 2
            shape = [1] * grid.ndim
            shape[k] = grid.n[k]
            profile = profile + ramp.reshape(shape)

    return AttenuationField(grid=grid, base=float(base_gamma), layer_width=int(layer_width),
                            profile=profile.ravel(order="F"), strength=float(strength))


def points_per_wavelength(m_max: float, omega: float, h_min: float) -> float:
    if omega == 0:
        return math.inf
    return 2.0 * math.pi / (omega * math.sqrt(m_max) * h_min)


@dataclass(frozen=True)
class HelmholtzProblem:
    """Assembled operator for one padded model and frequency"""
    model: SlownessSquaredModel
    omega: float
    attenuation: AttenuationField
    gamma: np.ndarray = field(repr=False)
    matrix: sp.csr_matrix = field(repr=False)

    @property
    def grid(self) -> RegularGrid:
        return self.model.grid

    @property
    def m_vector(self) -> np.ndarray:
        return self.model.vector

    @property
    def mass_derivative(self) -> np.ndarray:
        """dA/dm diagonal: w^2 (1 - i gamma / w)"""
        return self.omega**2 - 1j * self.omega * self.gamma


def build_helmholtz_problem(model: SlownessSquaredModel,
                            omega: float,
                            attenuation: AttenuationField,
                            check_ppw: bool = True) -> HelmholtzProblem:
    if omega < 0:
        raise InvalidArgumentError("omega must be nonnegative")
    if attenuation.grid.n != model.grid.n:
        raise InvalidArgumentError("Attenuation and model grids differ")
    ppw = points_per_wavelength(float(model.values.max()), omega, min(model.grid.h))
    if check_ppw and ppw < MIN_POINTS_PER_WAVELENGTH:
        raise InvalidArgumentError(
            f"Only {ppw:.2f} points per wavelength at omega={omega:.4g}; at least {MIN_POINTS_PER_WAVELENGTH:g} required")

    gamma = attenuation.gamma(omega)
    m = model.vector
    mass = omega**2 * m - 1j * omega * gamma * m
    matrix = (laplacian(model.grid) + sp.diags(mass)).tocsr()
    return HelmholtzProblem(model=model, omega=float(omega), attenuation=attenuation, gamma=gamma, matrix=matrix)


def apply_helmholtz(problem: HelmholtzProblem, u: np.ndarray) -> np.ndarray:
    u = np.asarray(u)
    if u.shape[0] != problem.grid.size:
        raise InvalidArgumentError(f"Field length {u.shape[0]} does not match grid size {problem.grid.size}")
    return problem.matrix @ u


def quantize_fields(U: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Per-column scaled 16-bit (re, im) pairs, shape (nodes, k, 2), and the float32 scales"""
    U = np.asarray(U).reshape(U.shape[0], -1)
    scales = np.maximum(np.abs(U.real).max(axis=0), np.abs(U.imag).max(axis=0)).astype(np.float32)
    safe = np.where(scales > 0, scales, 1.0).astype(np.float64)
    packed = np.stack([U.real / safe, U.imag / safe], axis=-1).astype(np.float16)
    return packed, scales


def dequantize_fields(packed: np.ndarray, scales: np.ndarray) -> np.ndarray:
    values = packed.astype(np.float64)
    return (values[..., 0] + 1j * values[..., 1]) * scales.astype(np.float64)[None, :]


@dataclass
class WavefieldBatch:
    """Fields for a set of sources, one column per source"""
    problem: Optional[HelmholtzProblem]
    source_ids: Tuple[int, ...]
    fields: np.ndarray = field(repr=False)
    precision: str = "full"
    report: Optional[SolveReport] = None

    def __post_init__(self):
        if self.precision not in PRECISIONS:
            raise InvalidArgumentError(f"Unknown precision '{self.precision}'")
        if self.fields.ndim != 2 or self.fields.shape[1] != len(self.source_ids):
            raise InvalidArgumentError("Field block must have one column per source id")

    def field_for(self, source_id: int) -> np.ndarray:
        try:
            return self.fields[:, self.source_ids.index(source_id)]
        except ValueError:
            raise StateError(f"No stored field for source {source_id}")

    def to_compact(self) -> "WavefieldBatch":
        packed, scales = quantize_fields(self.fields)
        return WavefieldBatch(self.problem, self.source_ids, dequantize_fields(packed, scales), "compact", self.report)


@dataclass(frozen=True)
class RickerSource:
    """Ricker wavelet with peak frequency f_m (Hz)"""
    f_m: float

    def time(self, t):
        a = (math.pi * self.f_m * np.asarray(t, dtype=np.float64)) ** 2
        return (1.0 - 2.0 * a) * np.exp(-a)

    def spectrum(self, omega):
        """Closed-form transform with the exp(-i w t) convention; real and nonnegative"""
        w = np.asarray(omega, dtype=np.float64)
        f = self.f_m
        return w**2 / (2.0 * math.pi**2.5 * f**3) * np.exp(-(w**2) / (4.0 * math.pi**2 * f**2))


def ricker(f_m: float) -> RickerSource:
    if not f_m > 0:
        raise InvalidArgumentError("Ricker peak frequency must be positive")
    return RickerSource(float(f_m))


@dataclass(frozen=True)
class SolverSettings:
    """Forward solver choice and multigrid parameters"""
    method: str = "mg_bicgstab"
    tol: float = DEFAULT_SOLVER_TOL
    maxit: int = DEFAULT_SOLVER_MAXIT

    # Multigrid
    nlevels: int = DEFAULT_MG_LEVELS
    shift_factor: float = DEFAULT_SHIFT_FACTOR
    pre_relax: int = DEFAULT_PRE_RELAX
    post_relax: int = DEFAULT_POST_RELAX
    jacobi_weight: float = DEFAULT_JACOBI_WEIGHT
    fgmres_restart: int = FGMRES_RESTART

    # Direct solver
    dense_lu_max_nodes: int = DENSE_LU_MAX_NODES

    def __post_init__(self):
        if self.method not in SOLVER_METHODS:
            raise InvalidArgumentError(f"Unknown solver method '{self.method}', expected one of {SOLVER_METHODS}")
        if not self.tol > 0:
            raise InvalidArgumentError("Solver tolerance must be positive")

    @property
    def cycle(self) -> CycleSpec:
        kind = "K" if self.method == "mg_fgmres_k" else "W"
        return CycleSpec(kind, self.pre_relax, self.post_relax, self.jacobi_weight)


class HelmholtzSolver:
    """Solves A u = q for blocks of sources, building its hierarchy or LU once"""

    def __init__(self, problem: HelmholtzProblem, settings: Optional[SolverSettings] = None):
        self.problem = problem
        self.settings = settings or SolverSettings()
        self.hierarchy: Optional[MgHierarchy] = None
        self._lu = None
        self.setup_time = 0.0

        if self.settings.method == "dense_lu_small" and problem.grid.size > self.settings.dense_lu_max_nodes:
            raise InvalidArgumentError(
                f"dense_lu_small allows at most {self.settings.dense_lu_max_nodes} nodes, grid has {problem.grid.size}")

    def setup(self) -> None:
        if self.hierarchy is not None or self._lu is not None:
            return
        start = time.perf_counter()
        if self.settings.method == "dense_lu_small":
            self._lu = scipy.linalg.lu_factor(self.problem.matrix.toarray())
        else:
            self.hierarchy = build_hierarchy(self.problem, self.settings.nlevels, self.settings.shift_factor)
        self.setup_time = time.perf_counter() - start
        logger.debug(f"Solver setup ({self.settings.method}) took {self.setup_time:.3f}s")

    def operator(self) -> LinearOperatorHandle:
        self.setup()
        precondition = None if self.hierarchy is None else self.hierarchy.preconditioner(self.settings.cycle)
        return LinearOperatorHandle(
            apply=lambda X: self.problem.matrix @ X,
            size=self.problem.grid.size,
            precondition=precondition,
            apply_transpose=lambda X: self.problem.matrix.T @ X,
            stationary=self.settings.method != "mg_fgmres_k",
        )

    def solve(self, Q: np.ndarray) -> Tuple[np.ndarray, SolveReport]:
        """
        Solve for every column of Q

        Args:
            Q: Right-hand side (nodes,) or (nodes, k)

        Returns:
            Tuple of the solution block and the SolveReport

        Raises:
            ConvergenceError: when any column misses the tolerance
        """
        Q = np.asarray(Q)
        if Q.shape[0] != self.problem.grid.size:
            raise InvalidArgumentError(f"Right-hand side length {Q.shape[0]} does not match grid size")
        op = self.operator()
        s = self.settings

        if s.method == "dense_lu_small":
            start = time.perf_counter()
            U = scipy.linalg.lu_solve(self._lu, Q.astype(np.complex128))
            Q2 = Q.reshape(Q.shape[0], -1)
            R = Q2 - op.apply(U.reshape(Q2.shape))
            qn = np.linalg.norm(Q2, axis=0)
            rel = np.linalg.norm(R, axis=0) / np.where(qn > 0, qn, 1.0)
            report = SolveReport(0, 0, rel, rel <= max(s.tol, 1e-10), time.perf_counter() - start)
            return U, report

        if s.method == "mg_bicgstab":
            U, report = block_bicgstab(op, Q, tol=s.tol, maxit=s.maxit)
        else:
            U, report = block_fgmres(op, Q, restart=s.fgmres_restart, tol=s.tol, maxit=s.maxit)

        if not report.all_converged:
            raise ConvergenceError(
                f"{s.method} missed tol {s.tol:g} at omega={self.problem.omega:.4g} "
                f"(worst residual {report.relative_residuals.max():.3e})",
                report.residual_history,
            )
        logger.debug(f"{s.method}: {report.cycles} cycles, worst residual {report.relative_residuals.max():.2e}")
        return U, report

    def solve_transposed(self, Y: np.ndarray) -> np.ndarray:
        """A^T x = y; A is complex symmetric so the same hierarchy applies"""
        X, _ = self.solve(Y)
        return X


def solve_helmholtz(problem: HelmholtzProblem,
                    Q: np.ndarray,
                    method: str = "mg_bicgstab",
                    tol: float = DEFAULT_SOLVER_TOL,
                    settings: Optional[SolverSettings] = None,
                    source_ids: Optional[Sequence[int]] = None) -> WavefieldBatch:
    """
    Solve the Helmholtz system for a block of right-hand sides

    Args:
        problem: Assembled operator
        Q: Right-hand sides, (nodes,) or (nodes, k)
        method: One of mg_bicgstab, mg_fgmres_w, mg_fgmres_k, dense_lu_small
        tol: Relative residual target per column
        settings: Full solver settings, overriding method and tol when given
        source_ids: Labels for the columns, 0..k-1 by default

    Returns:
        WavefieldBatch: Fields with the solve report attached
    """
    settings = settings or SolverSettings(method=method, tol=tol)
    Q2 = np.asarray(Q).reshape(np.shape(Q)[0], -1)
    U, report = HelmholtzSolver(problem, settings).solve(Q2)
    ids = tuple(range(Q2.shape[1])) if source_ids is None else tuple(source_ids)
    return WavefieldBatch(problem, ids, U.reshape(Q2.shape), "full", report)


def _extend(v: np.ndarray, padded: Optional[PaddedModel]) -> np.ndarray:
    return padded.extend(v) if padded is not None else np.asarray(v, dtype=np.float64)


def jacobian_block(solver: HelmholtzSolver, U: np.ndarray, v: np.ndarray, sampling: SamplingOperator,
                   padded: Optional[PaddedModel] = None, masks: Optional[np.ndarray] = None) -> np.ndarray:
    """J_s v for every source column of U, returned as (receivers, sources)"""
    if U is None:
        raise StateError("No stored wavefield for the sensitivity product")
    U = U.reshape(U.shape[0], -1)
    v_pad = _extend(v, padded)
    if not np.any(v_pad):
        return np.zeros((sampling.n_receivers, U.shape[1]), dtype=np.complex128)
    problem = solver.problem
    rhs = -(problem.mass_derivative * v_pad)[:, None] * U
    dU, _ = solver.solve(rhs)
    data = sample(sampling, dU.reshape(rhs.shape))
    if masks is not None:
        data = data * np.asarray(masks).T
    return data


def jacobian_transpose_block(solver: HelmholtzSolver, U: np.ndarray, W: np.ndarray, sampling: SamplingOperator,
                             padded: Optional[PaddedModel] = None, masks: Optional[np.ndarray] = None) -> np.ndarray:
    """sum_s Re(J_s^H w_s) for receiver data W of shape (receivers, sources)"""
    if U is None:
        raise StateError("No stored wavefield for the sensitivity product")
    U = U.reshape(U.shape[0], -1)
    W = np.asarray(W, dtype=np.complex128).reshape(sampling.n_receivers, -1)
    if masks is not None:
        W = W * np.asarray(masks).T
    problem = solver.problem
    if not np.any(W):
        g = np.zeros(problem.grid.size)
    else:
        Y = sample_adjoint(sampling, W)
        Z = solver.solve_transposed(np.conj(Y)).reshape(Y.shape)
        g = np.real(problem.mass_derivative[:, None] * U * Z).sum(axis=1)
        g = -g
    return padded.extend_adjoint(g) if padded is not None else g


def fwi_jacobian_vec(solver: HelmholtzSolver, u_s: np.ndarray, v: np.ndarray, sampling: SamplingOperator,
                     padded: Optional[PaddedModel] = None, mask: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Sensitivity of one source's receiver data to the model

    Jv = -P^T A^{-1} diag(w^2 (1 - i gamma/w)) diag(u_s) v, with v extended
    through the padding when a PaddedModel is given.
    """
    if u_s is None:
        raise StateError("No stored wavefield for this source")
    masks = None if mask is None else np.asarray(mask).reshape(1, -1)
    return jacobian_block(solver, np.asarray(u_s).reshape(-1, 1), v, sampling, padded, masks)[:, 0]


def fwi_jacobian_transpose_vec(solver: HelmholtzSolver, u_s: np.ndarray, w: np.ndarray, sampling: SamplingOperator,
                               padded: Optional[PaddedModel] = None, mask: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Adjoint of fwi_jacobian_vec under <a, b> = Re(a^H b)

    J^T w = -Re(diag(w^2 (1 - i gamma/w)) diag(u_s) A^{-1} conj(P w)), summed
    back onto the core grid when a PaddedModel is given.
    """
    if u_s is None:
        raise StateError("No stored wavefield for this source")
    masks = None if mask is None else np.asarray(mask).reshape(1, -1)
    return jacobian_transpose_block(solver, np.asarray(u_s).reshape(-1, 1), np.asarray(w).reshape(-1, 1),
                                    sampling, padded, masks)
