"""
Mesh and Model Module

Node-centered rectangular grids, squared-slowness models, edge-replicated
padding for absorbing layers, acquisition geometry and the receiver sampling
operator shared by the Helmholtz and eikonal solvers.

Fields are numpy arrays of shape ``grid.n``; linear algebra works on their
flattened form with the first axis fastest (Fortran order).
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple, Union

import numpy as np
import scipy.sparse as sp

from .errors import InvalidArgumentError

logger = logging.getLogger(__name__)

PadWidths = Union[Sequence[int], Sequence[Tuple[int, int]]]


@dataclass(frozen=True)
class RegularGrid:
    """Node-based rectangular mesh with physical spacing (meters)"""
    n: Tuple[int, ...]
    h: Tuple[float, ...]
    origin: Tuple[float, ...] = None

    def __post_init__(self):
        n = tuple(int(v) for v in self.n)
        h = tuple(float(v) for v in self.h)
        origin = tuple(float(v) for v in self.origin) if self.origin is not None else (0.0,) * len(n)
        if len(n) not in (2, 3):
            raise InvalidArgumentError(f"Grid must be 2D or 3D, got {len(n)} axes")
        if len(h) != len(n) or len(origin) != len(n):
            raise InvalidArgumentError("Grid n, h and origin must have the same length")
        for k, (nk, hk) in enumerate(zip(n, h)):
            if nk < 3:
                raise InvalidArgumentError(f"Axis {k} needs at least 3 nodes, got {nk}")
            if not hk > 0:
                raise InvalidArgumentError(f"Axis {k} spacing must be positive, got {hk}")
        if math.prod(n) >= 2**63:
            raise InvalidArgumentError("Grid node count overflows the index type")
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "origin", origin)

    @property
    def ndim(self) -> int:
        return len(self.n)

    @property
    def size(self) -> int:
        return math.prod(self.n)

    @property
    def cell_volume(self) -> float:
        return math.prod(self.h)

    @property
    def upper(self) -> Tuple[float, ...]:
        return tuple(o + (nk - 1) * hk for o, nk, hk in zip(self.origin, self.n, self.h))

    def axis_coordinates(self, axis: int) -> np.ndarray:
        return self.origin[axis] + self.h[axis] * np.arange(self.n[axis])

    def node_coordinates(self) -> np.ndarray:
        """Physical coordinates of every node, shape (size, ndim), first axis fastest"""
        axes = np.meshgrid(*[self.axis_coordinates(k) for k in range(self.ndim)], indexing="ij")
        return np.stack([a.ravel(order="F") for a in axes], axis=1)

    def flatten(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values)
        if values.shape == self.n:
            return values.ravel(order="F")
        if values.ndim == 1 and values.size == self.size:
            return values
        raise InvalidArgumentError(f"Field shape {values.shape} does not match grid {self.n}")

    def unflatten(self, vector: np.ndarray) -> np.ndarray:
        vector = np.asarray(vector)
        if vector.shape == self.n:
            return vector
        if vector.size != self.size:
            raise InvalidArgumentError(f"Vector of size {vector.size} does not match grid {self.n}")
        return vector.reshape(self.n, order="F")

    def flat_index(self, multi_index: Sequence[int]) -> int:
        return int(np.ravel_multi_index(tuple(int(i) for i in multi_index), self.n, order="F"))

    def contains(self, x: Sequence[float], rtol: float = 1e-9) -> bool:
        for k in range(self.ndim):
            slack = rtol * self.h[k]
            if x[k] < self.origin[k] - slack or x[k] > self.upper[k] + slack:
                return False
        return True

    def nearest_node(self, x: Sequence[float]) -> Tuple[int, ...]:
        """Nearest node; exact half-way positions snap to the lower index"""
        if not self.contains(x):
            raise InvalidArgumentError(f"Position {tuple(x)} lies outside the grid")
        idx = []
        for k in range(self.ndim):
            t = (x[k] - self.origin[k]) / self.h[k]
            idx.append(int(min(max(math.ceil(t - 0.5), 0), self.n[k] - 1)))
        return tuple(idx)

    def node_position(self, multi_index: Sequence[int]) -> np.ndarray:
        return np.array([self.origin[k] + multi_index[k] * self.h[k] for k in range(self.ndim)])


@dataclass(frozen=True)
class SlownessSquaredModel:
    """Squared slowness m = 1/c^2 (s^2/m^2) on the nodes of a grid"""
    grid: RegularGrid
    values: np.ndarray
    bounds: Optional[Tuple[float, float]] = None

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64).reshape(self.grid.n, order="F") \
            if np.ndim(self.values) == 1 else np.array(self.values, dtype=np.float64)
        if values.shape != self.grid.n:
            raise InvalidArgumentError(f"Model shape {values.shape} does not match grid {self.grid.n}")
        if not np.all(np.isfinite(values)) or np.any(values <= 0):
            raise InvalidArgumentError("Squared slowness must be finite and strictly positive")
        if self.bounds is not None:
            low, high = self.bounds
            if not 0 < low <= high:
                raise InvalidArgumentError(f"Invalid model bounds {self.bounds}")
            if np.any(values < low) or np.any(values > high):
                raise InvalidArgumentError("Model violates its bounds")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def vector(self) -> np.ndarray:
        return self.values.ravel(order="F")

    def with_values(self, values: np.ndarray) -> "SlownessSquaredModel":
        return SlownessSquaredModel(self.grid, values, self.bounds)


def velocity_to_slowness_squared(grid: RegularGrid, velocity: np.ndarray,
                                 bounds: Optional[Tuple[float, float]] = None) -> SlownessSquaredModel:
    """Convert a velocity field (m/s) to squared slowness"""
    c = np.asarray(velocity, dtype=np.float64)
    if np.any(~np.isfinite(c)) or np.any(c <= 0):
        raise InvalidArgumentError("Velocity must be strictly positive")
    return SlownessSquaredModel(grid, 1.0 / (c * c), bounds)


def slowness_squared_to_velocity(model: SlownessSquaredModel) -> np.ndarray:
    return 1.0 / np.sqrt(model.values)


def velocity_bounds_to_model_bounds(v_min: float, v_max: float) -> Tuple[float, float]:
    if not 0 < v_min <= v_max:
        raise InvalidArgumentError(f"Invalid velocity bounds ({v_min}, {v_max})")
    return 1.0 / v_max**2, 1.0 / v_min**2


def normalize_pad(ndim: int, pad: PadWidths) -> Tuple[Tuple[int, int], ...]:
    """Accept (lo1, hi1, lo2, hi2, ...) or ((lo1, hi1), ...) and return pairs"""
    items = list(pad)
    if items and isinstance(items[0], (tuple, list)):
        pairs = [tuple(int(w) for w in p) for p in items]
    else:
        if len(items) != 2 * ndim:
            raise InvalidArgumentError(f"Expected {2 * ndim} pad widths, got {len(items)}")
        pairs = [(int(items[2 * k]), int(items[2 * k + 1])) for k in range(ndim)]
    if len(pairs) != ndim or any(len(p) != 2 for p in pairs):
        raise InvalidArgumentError(f"Pad widths {pad} do not match a {ndim}D grid")
    for k, (lo, hi) in enumerate(pairs):
        if lo < 0 or hi < 0:
            raise InvalidArgumentError(f"Negative pad width on axis {k}")
    return tuple(pairs)


def coarsenable_pad(core_n: Sequence[int], pad: PadWidths, nlevels: int) -> Tuple[Tuple[int, int], ...]:
    """Grow the high-side padding until every padded axis admits nlevels-1 halvings"""
    pairs = [list(p) for p in normalize_pad(len(core_n), pad)]
    factor = 2 ** max(nlevels - 1, 0)
    for k, nk in enumerate(core_n):
        total = nk + pairs[k][0] + pairs[k][1]
        extra = (-(total - 1)) % factor
        if extra:
            logger.warning(f"Extending padding on axis {k} by {extra} node(s) for {nlevels}-level coarsening")
            pairs[k][1] += extra
    return tuple(tuple(p) for p in pairs)


@dataclass(frozen=True)
class PaddedModel:
    """Core model embedded in an edge-replicated padding"""
    core: SlownessSquaredModel
    pad: Tuple[Tuple[int, int], ...]
    padded: SlownessSquaredModel
    extension: sp.csr_matrix = field(repr=False)

    @property
    def window(self) -> Tuple[slice, ...]:
        return tuple(slice(lo, lo + nk) for (lo, _), nk in zip(self.pad, self.core.grid.n))

    def restrict(self, padded_field: np.ndarray) -> np.ndarray:
        """Core window of a padded field (grid shaped)"""
        return self.padded.grid.unflatten(padded_field)[self.window]

    def extend(self, core_vector: np.ndarray) -> np.ndarray:
        return self.extension @ self.core.grid.flatten(core_vector)

    def extend_adjoint(self, padded_vector: np.ndarray) -> np.ndarray:
        """Sum replicated padding contributions back onto the core nodes"""
        return self.extension.T @ self.padded.grid.flatten(padded_vector)


def padded_grid(grid: RegularGrid, pad: PadWidths) -> RegularGrid:
    pairs = normalize_pad(grid.ndim, pad)
    n = tuple(nk + lo + hi for nk, (lo, hi) in zip(grid.n, pairs))
    origin = tuple(o - lo * hk for o, (lo, _), hk in zip(grid.origin, pairs, grid.h))
    return RegularGrid(n, grid.h, origin)


def pad_model(core: SlownessSquaredModel, pad: PadWidths) -> PaddedModel:
    """
    Pad a model by replicating the nearest core boundary value along each axis

    Args:
        core: Model on the core grid
        pad: Per-side widths, (lo, hi) for every axis; a zero side is a free surface

    Returns:
        PaddedModel: Core, widths, padded model and the sparse extension operator
    """
    pairs = normalize_pad(core.grid.ndim, pad)
    grid = padded_grid(core.grid, pairs)

    values = np.pad(core.values, pairs, mode="edge")

    # Extension operator E: padded node -> clipped core node
    index_axes = [
        np.clip(np.arange(grid.n[k]) - pairs[k][0], 0, core.grid.n[k] - 1)
        for k in range(grid.ndim)
    ]
    mesh = np.meshgrid(*index_axes, indexing="ij")
    core_index = np.ravel_multi_index(tuple(a.ravel(order="F") for a in mesh), core.grid.n, order="F")
    extension = sp.csr_matrix(
        (np.ones(grid.size), (np.arange(grid.size), core_index)),
        shape=(grid.size, core.grid.size),
    )

    return PaddedModel(core=core, pad=pairs, padded=SlownessSquaredModel(grid, values), extension=extension)


@dataclass(frozen=True)
class AcquisitionGeometry:
    """Sources and receivers in physical coordinates with an offset window"""
    grid: RegularGrid
    sources: np.ndarray
    receivers: np.ndarray
    offset_min: float = 0.0
    offset_max: float = math.inf

    def __post_init__(self):
        sources = np.atleast_2d(np.asarray(self.sources, dtype=np.float64))
        receivers = np.atleast_2d(np.asarray(self.receivers, dtype=np.float64))
        for name, points in (("source", sources), ("receiver", receivers)):
            if points.shape[1] != self.grid.ndim:
                raise InvalidArgumentError(f"{name} positions must have {self.grid.ndim} coordinates")
            for i, x in enumerate(points):
                if not self.grid.contains(x):
                    raise InvalidArgumentError(f"{name} {i} at {tuple(x)} lies outside the core grid")
        if self.offset_min < 0 or self.offset_max < self.offset_min:
            raise InvalidArgumentError(f"Invalid offset window [{self.offset_min}, {self.offset_max}]")
        sources.setflags(write=False)
        receivers.setflags(write=False)
        object.__setattr__(self, "sources", sources)
        object.__setattr__(self, "receivers", receivers)

    @property
    def n_sources(self) -> int:
        return self.sources.shape[0]

    @property
    def n_receivers(self) -> int:
        return self.receivers.shape[0]

    @property
    def active_mask(self) -> np.ndarray:
        """Boolean (n_sources, n_receivers) mask of receivers inside the offset window"""
        dist = np.linalg.norm(self.sources[:, None, :] - self.receivers[None, :, :], axis=2)
        return (dist >= self.offset_min) & (dist <= self.offset_max)


@dataclass(frozen=True)
class SamplingOperator:
    """Multilinear interpolation matrix P (nodes x receivers) on a given grid"""
    grid: RegularGrid
    matrix: sp.csc_matrix = field(repr=False)

    @property
    def n_receivers(self) -> int:
        return self.matrix.shape[1]


def build_sampling_operator(grid: RegularGrid, receivers: np.ndarray) -> SamplingOperator:
    receivers = np.atleast_2d(np.asarray(receivers, dtype=np.float64))
    rows, cols, vals = [], [], []
    corners = np.array(np.meshgrid(*[[0, 1]] * grid.ndim, indexing="ij")).reshape(grid.ndim, -1).T
    for r, x in enumerate(receivers):
        if not grid.contains(x):
            raise InvalidArgumentError(f"Receiver {r} at {tuple(x)} lies outside the grid")
        base, frac = [], []
        for k in range(grid.ndim):
            t = min(max((x[k] - grid.origin[k]) / grid.h[k], 0.0), grid.n[k] - 1.0)
            i0 = min(int(math.floor(t)), grid.n[k] - 2)
            base.append(i0)
            frac.append(t - i0)
        for corner in corners:
            weight = 1.0
            for k in range(grid.ndim):
                weight *= frac[k] if corner[k] else 1.0 - frac[k]
            if weight == 0.0:
                continue
            rows.append(grid.flat_index([base[k] + corner[k] for k in range(grid.ndim)]))
            cols.append(r)
            vals.append(weight)
    matrix = sp.csc_matrix((vals, (rows, cols)), shape=(grid.size, receivers.shape[0]))
    return SamplingOperator(grid=grid, matrix=matrix)


def sample(op: SamplingOperator, u: np.ndarray, mask: Optional[np.ndarray] = None) -> np.ndarray:
    """Receiver values P^T u for a flattened field or a block of fields (nodes, k)"""
    u = np.asarray(u)
    if u.shape[0] != op.grid.size:
        raise InvalidArgumentError(f"Field of length {u.shape[0]} does not match grid size {op.grid.size}")
    values = op.matrix.T @ u
    if mask is not None:
        values = values * (mask if values.ndim == 1 else np.asarray(mask).reshape(-1, 1))
    return values


def sample_adjoint(op: SamplingOperator, d: np.ndarray, mask: Optional[np.ndarray] = None) -> np.ndarray:
    d = np.asarray(d)
    if d.shape[0] != op.n_receivers:
        raise InvalidArgumentError(f"Data of length {d.shape[0]} does not match {op.n_receivers} receivers")
    if mask is not None:
        d = d * (mask if d.ndim == 1 else np.asarray(mask).reshape(-1, 1))
    return op.matrix @ d


def point_source(grid: RegularGrid, x: Sequence[float], amplitude: complex = 1.0) -> np.ndarray:
    """Discrete delta at the nearest node, scaled by 1/prod(h)"""
    q = np.zeros(grid.size, dtype=np.complex128)
    q[grid.flat_index(grid.nearest_node(x))] = amplitude / grid.cell_volume
    return q
