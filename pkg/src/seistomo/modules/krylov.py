"""
Krylov Solvers Module

Block BiCGSTAB and block flexible GMRES for multi-right-hand-side Helmholtz
systems, plus (projected) preconditioned conjugate gradients for the
Gauss-Newton normal equations.

All solvers start from a zero initial guess and declare convergence only when
every column satisfies ||A x - b|| <= tol ||b||. Residuals in the returned
SolveReport are recomputed from the returned solution.
"""

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np
import scipy.linalg

from .constants import (
    BICGSTAB_MAX_RESTARTS,
    BREAKDOWN_CONDITION,
    DEFAULT_SOLVER_MAXIT,
    DEFAULT_SOLVER_TOL,
    FGMRES_RESTART,
    ORTHOGONALITY_TOL,
)
from .errors import BreakdownError, ConvergenceError, InvalidArgumentError

logger = logging.getLogger(__name__)

BlockAction = Callable[[np.ndarray], np.ndarray]


@dataclass
class LinearOperatorHandle:
    """Matrix-free operator acting on vectors (n,) or blocks (n, k)"""
    apply: BlockAction
    size: int
    dtype: np.dtype = np.complex128
    precondition: Optional[BlockAction] = None
    apply_transpose: Optional[BlockAction] = None
    # False when the preconditioner changes between applications (K-cycle)
    stationary: bool = True

    def preconditioned(self, R: np.ndarray) -> np.ndarray:
        if self.precondition is None:
            return R.copy()
        return self.precondition(R)


@dataclass
class SolveReport:
    """Outcome of one (block) solve"""
    iterations: int
    cycles: int
    relative_residuals: np.ndarray
    converged: np.ndarray
    wall_time: float
    residual_history: List[float] = field(default_factory=list)
    restarts: int = 0
    qr_factorizations: int = 0
    flag: str = ""

    @property
    def all_converged(self) -> bool:
        return bool(np.all(self.converged))

    @property
    def cycles_mean(self) -> float:
        """Preconditioner applications per column; every column rides the whole block"""
        return float(self.cycles)

    @property
    def flop_notes(self) -> str:
        return f"{self.qr_factorizations} thin QR factorizations, {self.cycles} preconditioner applications"


def _as_block(B: np.ndarray) -> Tuple[np.ndarray, bool]:
    B = np.asarray(B)
    if B.ndim == 1:
        return B.reshape(-1, 1), True
    if B.ndim != 2:
        raise InvalidArgumentError(f"Right-hand side must be a vector or a block, got shape {B.shape}")
    return B, False


def _column_norms(X: np.ndarray) -> np.ndarray:
    return np.linalg.norm(X, axis=0)


def relative_residuals(op: LinearOperatorHandle, X: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Per-column ||B - A X|| / ||B|| (zero columns of B report the absolute residual)"""
    X2, _ = _as_block(X)
    B2, _ = _as_block(B)
    R = B2 - op.apply(X2)
    bnorm = _column_norms(B2)
    rnorm = _column_norms(R)
    return np.where(bnorm > 0, rnorm / np.where(bnorm > 0, bnorm, 1.0), rnorm)


def _finish(op, X, B, squeeze, tol, start, **report_fields) -> Tuple[np.ndarray, SolveReport]:
    rel = relative_residuals(op, X, B)
    report = SolveReport(
        relative_residuals=rel,
        converged=rel <= tol,
        wall_time=time.perf_counter() - start,
        **report_fields,
    )
    return (X[:, 0] if squeeze else X), report


def _solve_small(G: np.ndarray, rhs: np.ndarray) -> Optional[np.ndarray]:
    """Solve a small block system, None when it is numerically singular"""
    try:
        if not np.all(np.isfinite(G)) or np.linalg.cond(G) > BREAKDOWN_CONDITION:
            return None
        return scipy.linalg.solve(G, rhs)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
        return None


def block_bicgstab(op: LinearOperatorHandle,
                   B: np.ndarray,
                   tol: float = DEFAULT_SOLVER_TOL,
                   maxit: int = DEFAULT_SOLVER_MAXIT,
                   max_restarts: int = BICGSTAB_MAX_RESTARTS) -> Tuple[np.ndarray, SolveReport]:
    """
    Right-preconditioned block BiCGSTAB

    Args:
        op: Operator with a stationary preconditioner
        B: Right-hand side vector or block (n, k)
        tol: Relative residual target for every column
        maxit: Iteration cap (each iteration applies the preconditioner twice)
        max_restarts: Restarts allowed after a breakdown of the block recursion

    Returns:
        Tuple of the solution and its SolveReport
    """
    if tol <= 0:
        raise InvalidArgumentError("tol must be positive")
    if not op.stationary:
        raise InvalidArgumentError("BiCGSTAB requires a stationary preconditioner")

    start = time.perf_counter()
    B2, squeeze = _as_block(B)
    X = np.zeros(B2.shape, dtype=np.result_type(B2.dtype, op.dtype))

    bnorm = _column_norms(B2)
    nonzero = bnorm > 0
    if not np.any(nonzero):
        return _finish(op, X, B2, squeeze, tol, start, iterations=0, cycles=0)

    Bn = B2[:, nonzero]
    bn = bnorm[nonzero]
    Xn = np.zeros(Bn.shape, dtype=X.dtype)
    R = Bn.copy()

    history: List[float] = []
    iterations = 0
    cycles = 0
    breakdowns = 0
    converged = False

    while iterations < maxit:
        shadow = R.copy()
        P = R.copy()
        broke = False
        recursion_converged = False

        while iterations < maxit:
            P_hat = op.preconditioned(P)
            cycles += 1
            V = op.apply(P_hat)
            G = shadow.conj().T @ V
            alpha = _solve_small(G, shadow.conj().T @ R)
            if alpha is None:
                broke = True
                break
            S = R - V @ alpha
            iterations += 1

            rel = _column_norms(S) / bn
            if rel.max() <= tol:
                Xn += P_hat @ alpha
                R = S
                history.append(float(rel.max()))
                recursion_converged = True
                break

            S_hat = op.preconditioned(S)
            cycles += 1
            T = op.apply(S_hat)
            tt = np.vdot(T, T).real
            if tt == 0.0:
                broke = True
                break
            omega = np.vdot(T, S) / tt

            Xn += P_hat @ alpha + omega * S_hat
            R = S - omega * T
            rel = _column_norms(R) / bn
            history.append(float(rel.max()))
            logger.debug(f"BiCGSTAB iteration {iterations}: max relative residual {rel.max():.3e}")
            if rel.max() <= tol:
                recursion_converged = True
                break

            beta = _solve_small(G, -(shadow.conj().T @ T))
            if beta is None:
                broke = True
                break
            P = R + (P - omega * V) @ beta

        if broke:
            if breakdowns >= max_restarts:
                raise BreakdownError("Block BiCGSTAB breakdown", iteration=iterations, residual_history=history)
            breakdowns += 1
            logger.warning(f"Block BiCGSTAB breakdown at iteration {iterations}, restarting ({breakdowns}/{max_restarts})")
            R = Bn - op.apply(Xn)
            continue

        if recursion_converged:
            # The recursion may drift from the true residual; restart from it if so
            R = Bn - op.apply(Xn)
            true_rel = _column_norms(R) / bn
            if true_rel.max() <= tol:
                converged = True
                break
            logger.debug(f"BiCGSTAB recursion drift: true residual {true_rel.max():.3e}, restarting")

    if not converged:
        logger.info(f"Block BiCGSTAB stopped after {iterations} iterations without reaching tol {tol:g}")

    X[:, nonzero] = Xn
    return _finish(op, X, B2, squeeze, tol, start,
                   iterations=iterations, cycles=cycles, residual_history=history, restarts=breakdowns)


def _orthogonality_loss(basis: List[np.ndarray], W: np.ndarray) -> float:
    wnorm = np.linalg.norm(W)
    if wnorm == 0.0:
        return 0.0
    return max(np.linalg.norm(V.conj().T @ W) for V in basis) / wnorm


def block_fgmres(op: LinearOperatorHandle,
                 B: np.ndarray,
                 restart: int = FGMRES_RESTART,
                 tol: float = DEFAULT_SOLVER_TOL,
                 maxit: int = DEFAULT_SOLVER_MAXIT) -> Tuple[np.ndarray, SolveReport]:
    """
    Block flexible GMRES(restart) with right preconditioning

    The block Krylov basis is orthonormalized with block modified Gram-Schmidt
    followed by a thin QR factorization per iteration. tol = 0 runs exactly
    maxit iterations, which the K-cycle uses for its inner coarse solves.

    Args:
        op: Operator; its preconditioner may vary per iteration (the preconditioned
            directions are kept, so stationary and K-cycle preconditioners both work)
        B: Right-hand side vector or block (n, k)
        restart: Block Arnoldi steps per cycle
        tol: Relative residual target for every column
        maxit: Cap on the total number of inner iterations

    Returns:
        Tuple of the solution and its SolveReport
    """
    if tol < 0 or restart < 1:
        raise InvalidArgumentError("block_fgmres needs tol >= 0 and restart >= 1")

    start = time.perf_counter()
    B2, squeeze = _as_block(B)
    X = np.zeros(B2.shape, dtype=np.result_type(B2.dtype, op.dtype))

    bnorm = _column_norms(B2)
    nonzero = bnorm > 0
    if not np.any(nonzero):
        return _finish(op, X, B2, squeeze, max(tol, 0.0), start, iterations=0, cycles=0)

    Bn = B2[:, nonzero]
    bn = bnorm[nonzero]
    k = Bn.shape[1]
    Xn = np.zeros(Bn.shape, dtype=X.dtype)

    history: List[float] = []
    iterations = 0
    qr_count = 0
    outer = 0

    while iterations < maxit:
        R = Bn - op.apply(Xn) if outer else Bn.astype(X.dtype, copy=True)
        rel = _column_norms(R) / bn
        if tol > 0 and rel.max() <= tol:
            break
        outer += 1

        V0, S0 = scipy.linalg.qr(R, mode="economic")
        qr_count += 1
        basis = [V0]
        directions: List[np.ndarray] = []
        H = np.zeros(((restart + 1) * k, restart * k), dtype=X.dtype)
        E = np.zeros(((restart + 1) * k, k), dtype=X.dtype)
        E[:k] = S0
        Y = None

        for j in range(restart):
            Z = op.preconditioned(basis[j])
            directions.append(Z)
            W = op.apply(Z)

            cols = slice(j * k, (j + 1) * k)
            for i, V in enumerate(basis):
                Hij = V.conj().T @ W
                W = W - V @ Hij
                H[i * k:(i + 1) * k, cols] += Hij
            if _orthogonality_loss(basis, W) > ORTHOGONALITY_TOL:
                for i, V in enumerate(basis):
                    Hij = V.conj().T @ W
                    W = W - V @ Hij
                    H[i * k:(i + 1) * k, cols] += Hij
                if _orthogonality_loss(basis, W) > ORTHOGONALITY_TOL:
                    raise ConvergenceError("Block FGMRES lost orthogonality after re-orthogonalization", history)

            V_next, H_next = scipy.linalg.qr(W, mode="economic")
            qr_count += 1
            H[(j + 1) * k:(j + 2) * k, cols] = H_next
            iterations += 1

            m = j + 1
            Hm = H[:(m + 1) * k, :m * k]
            Em = E[:(m + 1) * k]
            Y = np.linalg.lstsq(Hm, Em, rcond=None)[0]
            ls_rel = _column_norms(Em - Hm @ Y) / bn
            history.append(float(ls_rel.max()))
            logger.debug(f"FGMRES iteration {iterations}: max relative residual {ls_rel.max():.3e}")

            happy = np.linalg.norm(H_next) <= 1e-14 * max(np.linalg.norm(Hm), 1e-300)
            if (tol > 0 and ls_rel.max() <= tol) or happy or iterations >= maxit:
                break
            basis.append(V_next)

        Xn = Xn + np.hstack(directions) @ Y

        if tol > 0:
            true_rel = _column_norms(Bn - op.apply(Xn)) / bn
            if true_rel.max() <= tol:
                break

    X[:, nonzero] = Xn
    return _finish(op, X, B2, squeeze, tol if tol > 0 else np.inf, start,
                   iterations=outer, cycles=iterations, residual_history=history, qr_factorizations=qr_count)


def pcg(op: LinearOperatorHandle,
        b: np.ndarray,
        prec: Optional[BlockAction] = None,
        tol: float = 1e-8,
        maxit: int = 100) -> Tuple[np.ndarray, SolveReport]:
    """Preconditioned conjugate gradients for a symmetric positive (semi)definite operator"""
    return projected_pcg(op, b, prec, None, tol, maxit)


def projected_pcg(op: LinearOperatorHandle,
                  b: np.ndarray,
                  prec: Optional[BlockAction],
                  inactive_mask: Optional[np.ndarray],
                  tol: float = 1e-8,
                  maxit: int = 100) -> Tuple[np.ndarray, SolveReport]:
    """
    PCG restricted to the coordinates selected by inactive_mask

    Every vector is pinned to zero outside the mask. A non-positive curvature
    p^T A p <= 0 stops the iteration and returns the current iterate flagged
    as "negative_curvature".

    Args:
        op: Symmetric operator (real)
        b: Right-hand side
        prec: Symmetric positive definite preconditioner action, identity if None
        inactive_mask: Boolean mask of free coordinates, all free if None
        tol: Relative residual target
        maxit: Iteration cap

    Returns:
        Tuple of the solution and its SolveReport
    """
    start = time.perf_counter()
    b = np.asarray(b, dtype=np.float64)
    mask = np.ones(b.shape, dtype=bool) if inactive_mask is None else np.asarray(inactive_mask, dtype=bool)
    if mask.shape != b.shape:
        raise InvalidArgumentError("inactive_mask must match the right-hand side")

    def project(v):
        return np.where(mask, v, 0.0)

    def apply(v):
        return project(op.apply(project(v)))

    def precondition(v):
        return project(prec(project(v))) if prec is not None else project(v)

    x = np.zeros_like(b)
    r = project(b)
    bnorm = np.linalg.norm(r)
    history: List[float] = []
    flag = ""
    iterations = 0

    if bnorm > 0:
        z = precondition(r)
        p = z.copy()
        rz = float(r @ z)
        while iterations < maxit:
            q = apply(p)
            curvature = float(p @ q)
            if curvature <= 0.0:
                flag = "negative_curvature"
                logger.warning(f"PCG detected non-positive curvature at iteration {iterations}")
                break
            step = rz / curvature
            x = x + step * p
            r = r - step * q
            iterations += 1
            history.append(float(np.sqrt(max(rz, 0.0))) / bnorm)
            if np.linalg.norm(r) <= tol * bnorm:
                break
            z = precondition(r)
            rz_next = float(r @ z)
            p = z + (rz_next / rz) * p
            rz = rz_next

    r_true = project(b) - apply(x)
    rel = np.linalg.norm(r_true) / bnorm if bnorm > 0 else np.linalg.norm(r_true)
    report = SolveReport(
        iterations=iterations,
        cycles=iterations,
        relative_residuals=np.array([rel]),
        converged=np.array([rel <= tol]),
        wall_time=time.perf_counter() - start,
        residual_history=history,
        flag=flag,
    )
    return x, report
