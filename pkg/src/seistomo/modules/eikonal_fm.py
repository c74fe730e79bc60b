"""
Factored Eikonal Module

First-arrival travel times from the factored eikonal equation
tau = tau0 * tau1, tau0 = |x - x_s|, solved by Fast Marching with a
first-order Gudonov upwind scheme, and the exact sensitivity of the travel
times to the squared slowness through a triangular system in the
Fast Marching acceptance order.
"""

import heapq
import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import InvalidArgumentError, StateError
from .mesh_model import RegularGrid, SlownessSquaredModel

logger = logging.getLogger(__name__)

# Per-axis stencil codes; 3 and 4 are reserved for second-order one-sided stencils
CODE_NONE = 0
CODE_BACKWARD = 1
CODE_FORWARD = 2
CODES_PER_AXIS = 5

FAR, FRONT, KNOWN = 0, 1, 2


def encode_codes(per_axis: Sequence[int]) -> int:
    return sum(c * CODES_PER_AXIS**k for k, c in enumerate(per_axis))


def decode_codes(codes: np.ndarray, ndim: int) -> np.ndarray:
    """(ndim, n) array of per-axis stencil codes"""
    codes = np.asarray(codes, dtype=np.int64)
    return np.stack([(codes // CODES_PER_AXIS**k) % CODES_PER_AXIS for k in range(ndim)])


def source_factor(grid: RegularGrid, source_node: Sequence[int]) -> Tuple[np.ndarray, np.ndarray]:
    """tau0 = |x - x_s| and its gradient p0 (zero at the source), flattened"""
    diff = grid.node_coordinates() - grid.node_position(source_node)[None, :]
    tau0 = np.linalg.norm(diff, axis=1)
    safe = np.where(tau0 > 0, tau0, 1.0)
    p0 = (diff / safe[:, None]).T
    p0[:, tau0 == 0] = 0.0
    return tau0, p0


@dataclass(frozen=True)
class FactoredEikonalSolution:
    grid: RegularGrid
    source_node: Tuple[int, ...]
    tau1: np.ndarray = field(repr=False)
    tau0: np.ndarray = field(repr=False)
    p0: np.ndarray = field(repr=False)

    @property
    def source_position(self) -> np.ndarray:
        return self.grid.node_position(self.source_node)


@dataclass(frozen=True)
class SensitivityRecord:
    """Per-source data needed to apply the travel-time Jacobian: 72 bits per node"""
    grid: RegularGrid
    source_node: Tuple[int, ...]
    fm_order: np.ndarray = field(repr=False)
    direction_codes: np.ndarray = field(repr=False)
    tau1: np.ndarray = field(repr=False)

    def __post_init__(self):
        n = self.grid.size
        if n >= 2**32:
            raise InvalidArgumentError("Sensitivity records need fewer than 2^32 nodes")
        order = np.asarray(self.fm_order, dtype="<u4")
        codes = np.asarray(self.direction_codes, dtype=np.uint8)
        tau1 = np.asarray(self.tau1, dtype="<f4")
        if order.shape != (n,) or codes.shape != (n,) or tau1.shape != (n,):
            raise InvalidArgumentError("Record arrays must have one entry per grid node")
        for arr in (order, codes, tau1):
            arr.setflags(write=False)
        object.__setattr__(self, "fm_order", order)
        object.__setattr__(self, "direction_codes", codes)
        object.__setattr__(self, "tau1", tau1)

    @property
    def bits_per_node(self) -> int:
        return 8 * (self.fm_order.itemsize + self.direction_codes.itemsize + self.tau1.itemsize)

    @property
    def nbytes(self) -> int:
        return self.fm_order.nbytes + self.direction_codes.nbytes + self.tau1.nbytes


class FastMarching:
    """Front propagation state for one source"""

    def __init__(self, model: SlownessSquaredModel, source_position: Sequence[float]):
        self.grid = model.grid
        self.source_node = self.grid.nearest_node(source_position)
        self.source_index = self.grid.flat_index(self.source_node)
        self.m = model.vector.tolist()
        tau0, p0 = source_factor(self.grid, self.source_node)
        self.tau0_array = tau0
        self.p0_array = p0
        self.tau0 = tau0.tolist()
        self.p0 = [row.tolist() for row in p0]

        n = self.grid.size
        self.strides = [math.prod(self.grid.n[:k]) for k in range(self.grid.ndim)]
        multi = np.unravel_index(np.arange(n), self.grid.n, order="F")
        self.multi = [axis.tolist() for axis in multi]

        self.tau1 = [math.inf] * n
        self.codes = bytearray(n)
        self.status = bytearray(n)
        self.order: List[int] = []
        self.accepted_keys: List[float] = []
        self.heap: List[Tuple[float, int]] = []
        self.front_key = 0.0

    def _candidates(self, i: int) -> List[List[Tuple[float, float, int]]]:
        t0 = self.tau0[i]
        per_axis = []
        for k in range(self.grid.ndim):
            stride, hk, ik = self.strides[k], self.grid.h[k], self.multi[k][i]
            cands = []
            if ik > 0 and self.status[i - stride] == KNOWN:
                cands.append((t0 / hk + self.p0[k][i], t0 * self.tau1[i - stride] / hk, CODE_BACKWARD))
            if ik < self.grid.n[k] - 1 and self.status[i + stride] == KNOWN:
                cands.append((t0 / hk - self.p0[k][i], t0 * self.tau1[i + stride] / hk, CODE_FORWARD))
            per_axis.append(cands)
        return per_axis

    def local_solve(self, i: int) -> Tuple[float, int]:
        """Smallest tau1 solving sum_k max(D_k, 0)^2 = m over the known neighbors"""
        mi = self.m[i]
        per_axis = self._candidates(i)
        slack = 1e-12 * math.sqrt(mi)
        best, best_code = math.inf, CODE_NONE

        for combo in itertools.product(*[[None] + c for c in per_axis]):
            used = [c for c in combo if c is not None]
            if not used:
                continue
            A = sum(a * a for a, _, _ in used)
            B = sum(a * b for a, b, _ in used)
            C = sum(b * b for _, b, _ in used)
            if A <= 0:
                continue
            disc = B * B - A * (C - mi)
            if disc < 0:
                continue
            tau = (B + math.sqrt(disc)) / A
            if tau >= best:
                continue

            valid = True
            for choice, cands in zip(combo, per_axis):
                values = [a * tau - b for a, b, _ in cands]
                if choice is None:
                    valid = all(v <= slack for v in values)
                else:
                    own = choice[0] * tau - choice[1]
                    valid = own > 0 and all(v <= own + slack for v in values)
                if not valid:
                    break
            if valid:
                best = tau
                best_code = encode_codes([CODE_NONE if c is None else c[2] for c in combo])

        if best == math.inf:
            # Only reachable through round-off; take the cheapest one-sided update
            for k, cands in enumerate(per_axis):
                for a, b, code in cands:
                    if a > 0:
                        tau = (b + math.sqrt(mi)) / a
                        if tau < best:
                            codes = [CODE_NONE] * self.grid.ndim
                            codes[k] = code
                            best, best_code = tau, encode_codes(codes)
        return best, best_code

    def _accept(self, i: int, key: float) -> None:
        self.status[i] = KNOWN
        self.order.append(i)
        self.accepted_keys.append(key)
        self.front_key = key

    def _relax_neighbors(self, i: int) -> None:
        for k in range(self.grid.ndim):
            stride, ik = self.strides[k], self.multi[k][i]
            for j, inside in ((i - stride, ik > 0), (i + stride, ik < self.grid.n[k] - 1)):
                if not inside or self.status[j] == KNOWN:
                    continue
                tau1, code = self.local_solve(j)
                if tau1 < self.tau1[j]:
                    self.tau1[j] = tau1
                    self.codes[j] = code
                    self.status[j] = FRONT
                    # Keys are clamped to the front so acceptance stays causal
                    heapq.heappush(self.heap, (max(self.tau0[j] * tau1, self.front_key), j))

    def run(self) -> Tuple[FactoredEikonalSolution, SensitivityRecord]:
        s = self.source_index
        self.tau1[s] = math.sqrt(self.m[s])
        self._accept(s, 0.0)
        self._relax_neighbors(s)

        while self.heap:
            key, i = heapq.heappop(self.heap)
            if self.status[i] == KNOWN:
                continue
            self._accept(i, key)
            self._relax_neighbors(i)

        assert len(self.order) == self.grid.size, "Fast Marching left nodes unreached"

        tau1 = np.array(self.tau1)
        solution = FactoredEikonalSolution(
            grid=self.grid,
            source_node=self.source_node,
            tau1=self.grid.unflatten(tau1),
            tau0=self.grid.unflatten(self.tau0_array),
            p0=self.p0_array,
        )
        record = SensitivityRecord(
            grid=self.grid,
            source_node=self.source_node,
            fm_order=np.array(self.order, dtype="<u4"),
            direction_codes=np.frombuffer(bytes(self.codes), dtype=np.uint8).copy(),
            tau1=tau1.astype("<f4"),
        )
        return solution, record


def fm_solve(model: SlownessSquaredModel,
             source_position: Sequence[float]) -> Tuple[FactoredEikonalSolution, SensitivityRecord]:
    """
    Solve the factored eikonal equation for one source

    Args:
        model: Squared slowness on the (core) grid
        source_position: Physical source position, snapped to the nearest node

    Returns:
        Tuple of the solution and the compact sensitivity record
    """
    return FastMarching(model, source_position).run()


def travel_time(solution: FactoredEikonalSolution) -> np.ndarray:
    """tau = tau0 * tau1 on the grid"""
    return solution.tau0 * solution.tau1


def _derivative_rows(grid: RegularGrid, tau0: np.ndarray, p0: np.ndarray, per_axis: np.ndarray):
    """Yield (axis, nodes, neighbours, self coefficient, neighbour coefficient) per chosen stencil"""
    nodes = np.arange(grid.size)
    for k in range(grid.ndim):
        stride = math.prod(grid.n[:k])
        hk = grid.h[k]
        back = per_axis[k] == CODE_BACKWARD
        fwd = per_axis[k] == CODE_FORWARD
        yield k, nodes[back], nodes[back] - stride, tau0[back] / hk + p0[k][back], -tau0[back] / hk
        yield k, nodes[fwd], nodes[fwd] + stride, -tau0[fwd] / hk + p0[k][fwd], tau0[fwd] / hk


def discrete_residual(solution: FactoredEikonalSolution, record: SensitivityRecord,
                      model: SlownessSquaredModel) -> np.ndarray:
    """sum_k (D_k tau1)^2 - m with the recorded stencils (flattened; source entry is zero)"""
    grid = solution.grid
    tau1 = grid.flatten(solution.tau1)
    tau0 = grid.flatten(solution.tau0)
    per_axis = decode_codes(record.direction_codes, grid.ndim)
    lhs = np.zeros(grid.size)
    for _, nodes, nbrs, c_self, c_nbr in _derivative_rows(grid, tau0, solution.p0, per_axis):
        lhs[nodes] += (c_self * tau1[nodes] + c_nbr * tau1[nbrs]) ** 2
    residual = lhs - model.vector
    residual[grid.flat_index(solution.source_node)] = 0.0
    return residual


class EikonalSensitivity:
    """
    Triangular sensitivity system rebuilt from a record for one product.

    Rows come from the recorded stencils; permuted into acceptance order the
    matrix is lower triangular, so J v and J^T w are one forward or backward
    substitution each. Nothing is kept on the record between products.
    """

    def __init__(self, record: SensitivityRecord):
        grid = record.grid
        self.grid = grid
        tau0, p0 = source_factor(grid, record.source_node)
        self.tau0 = tau0
        tau1 = record.tau1.astype(np.float64)
        source = grid.flat_index(record.source_node)

        per_axis = decode_codes(record.direction_codes, grid.ndim)
        rows, cols, vals = [], [], []
        for _, nodes, nbrs, c_self, c_nbr in _derivative_rows(grid, tau0, p0, per_axis):
            d = c_self * tau1[nodes] + c_nbr * tau1[nbrs]
            rows.extend([nodes, nodes])
            cols.extend([nodes, nbrs])
            vals.extend([2.0 * d * c_self, 2.0 * d * c_nbr])

        self.zero_rows = record.direction_codes == CODE_NONE
        self.zero_rows[source] = False
        fixed = np.flatnonzero(self.zero_rows)
        rows.extend([np.array([source]), fixed])
        cols.extend([np.array([source]), fixed])
        vals.extend([np.array([2.0 * tau1[source]]), np.ones(fixed.size)])

        matrix = sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(grid.size, grid.size),
        )
        self.matrix = matrix
        self.order = record.fm_order.astype(np.int64)
        self.permuted = matrix[self.order][:, self.order].tocsr()

    def solve(self, v: np.ndarray) -> np.ndarray:
        rhs = np.where(self.zero_rows, 0.0, v)[self.order]
        z = np.empty(self.grid.size)
        z[self.order] = spla.spsolve_triangular(self.permuted, rhs, lower=True)
        return z

    def solve_transposed(self, y: np.ndarray) -> np.ndarray:
        rhs = np.asarray(y, dtype=np.float64)[self.order]
        x = np.empty(self.grid.size)
        x[self.order] = spla.spsolve_triangular(self.permuted.T.tocsr(), rhs, lower=False)
        return np.where(self.zero_rows, 0.0, x)


def _as_model_vector(record: SensitivityRecord, v: np.ndarray, grid: Optional[RegularGrid]) -> np.ndarray:
    if grid is not None and grid.n != record.grid.n:
        raise InvalidArgumentError(f"Grid {grid.n} does not match the record grid {record.grid.n}")
    v = np.asarray(v, dtype=np.float64)
    if v.size != record.grid.size:
        raise InvalidArgumentError(f"Vector of size {v.size} does not match record grid {record.grid.n}")
    return v.ravel(order="F") if v.shape == record.grid.n else v.ravel()


def eik_jacobian_vec(record: SensitivityRecord, v: np.ndarray, grid: Optional[RegularGrid] = None) -> np.ndarray:
    """Travel-time perturbation tau0 * z with z solving the upwind sensitivity system for v"""
    if record is None:
        raise StateError("No sensitivity record for this source")
    v = _as_model_vector(record, v, grid)
    if not np.any(v):
        return np.zeros(record.grid.size)
    op = EikonalSensitivity(record)
    return op.tau0 * op.solve(v)


def eik_jacobian_transpose_vec(record: SensitivityRecord, w: np.ndarray,
                               grid: Optional[RegularGrid] = None) -> np.ndarray:
    if record is None:
        raise StateError("No sensitivity record for this source")
    w = _as_model_vector(record, w, grid)
    if not np.any(w):
        return np.zeros(record.grid.size)
    op = EikonalSensitivity(record)
    return op.solve_transposed(op.tau0 * w)
