import logging
import math
from typing import List, Sequence

import numpy as np

from ..constants import BENCH_COLUMNS
from ..data_types import BenchCommand, BenchmarkSpec, BenchResult, BenchRow
from ..errors import ConvergenceError, InvalidArgumentError
from ..file_formats import write_csv
from ..helmholtz import HelmholtzSolver, SolverSettings, assemble_attenuation, build_helmholtz_problem
from ..mesh_model import RegularGrid, point_source, velocity_to_slowness_squared
from ..multigrid import check_coarsenable
from ..synthetic import linear_velocity

logger = logging.getLogger(__name__)

COMPLEX_BYTES = 16
# Krylov basis plus work vectors per right-hand side
KRYLOV_VECTORS = 16


def estimate_memory_gb(n: Sequence[int], spec: BenchmarkSpec) -> float:
    """
    Rough peak footprint of one benchmark case

    Counts the fine operator and its shifted copy (2d+1 entries per row),
    the grid hierarchy at 1/2^d of the work per level, and the Krylov
    block of the widest configured method.
    """
    nodes = math.prod(n)
    ndim = len(n)
    stencil = 2 * ndim + 1
    hierarchy = sum(0.5 ** (ndim * level) for level in range(spec.nlevels))
    block = max(spec.block_sizes)
    matrix_bytes = 2 * nodes * stencil * (COMPLEX_BYTES + 4) * hierarchy
    block_bytes = nodes * block * KRYLOV_VECTORS * COMPLEX_BYTES
    return (matrix_bytes + block_bytes) / 1024**3


def _grid_label(n: Sequence[int]) -> str:
    return "x".join(str(v) for v in n)


def _random_sources(grid: RegularGrid, count: int, rng: np.random.Generator) -> np.ndarray:
    """Point sources at distinct random interior nodes, one column each"""
    interior = [np.arange(1, nk - 1) for nk in grid.n]
    Q = np.zeros((grid.size, count), dtype=np.complex128)
    chosen = set()
    while len(chosen) < count:
        index = tuple(int(rng.choice(axis)) for axis in interior)
        if index in chosen:
            continue
        chosen.add(index)
        Q[:, len(chosen) - 1] = point_source(grid, grid.node_position(index))
    return Q


def _bench_grid(n: List[int], spec: BenchmarkSpec, rng: np.random.Generator) -> List[BenchRow]:
    grid = RegularGrid(tuple(n), (spec.h,) * len(n))
    model = velocity_to_slowness_squared(grid, linear_velocity(grid, spec.v_min, spec.v_max))
    attenuation = assemble_attenuation(grid, spec.attenuation, spec.layer_width, free_surface=False)
    # omega sits exactly at the configured points per wavelength
    problem = build_helmholtz_problem(model, spec.omega(), attenuation, check_ppw=False)
    Q = _random_sources(grid, max(spec.block_sizes), rng)
    label = _grid_label(n)

    rows = []
    for method in spec.methods:
        settings = SolverSettings(method=method, tol=spec.tol, maxit=spec.maxit, nlevels=spec.nlevels,
                                  shift_factor=spec.shift_factor)
        solver = HelmholtzSolver(problem, settings)
        solver.setup()
        for block in spec.block_sizes:
            try:
                _, report = solver.solve(Q[:, :block])
                row = BenchRow(grid=label, method=method, block=block, setup_s=solver.setup_time,
                               cycles_mean=report.cycles_mean, solve_s_per_rhs=report.wall_time / block,
                               converged=report.all_converged)
            except ConvergenceError as e:
                logger.warning(f"{label} {method} block {block} did not converge: {e}")
                row = BenchRow(grid=label, method=method, block=block, setup_s=solver.setup_time,
                               cycles_mean=math.nan, solve_s_per_rhs=math.nan, converged=False)
            logger.info(f"{label} {method} block {block}: {row.cycles_mean:g} cycles, "
                        f"{row.solve_s_per_rhs:.3f}s per right-hand side")
            rows.append(row)
    return rows


def bench(command: BenchCommand) -> BenchResult:
    """
    Time the multigrid-preconditioned block solvers on a gradient model

    Args:
        command: BenchCommand with the benchmark settings, output directory and seed

    Returns:
        BenchResult: The CSV path and one row per (grid, method, block size)
    """
    spec = command.spec
    for n in spec.grids:
        check_coarsenable(tuple(n), spec.nlevels)
        needed = estimate_memory_gb(n, spec)
        if needed > spec.max_memory_gb:
            raise InvalidArgumentError(
                f"Grid {_grid_label(n)} needs about {needed:.2f} GB, above the {spec.max_memory_gb:g} GB cap")

    rng = np.random.default_rng(command.seed)
    rows: List[BenchRow] = []
    try:
        for n in spec.grids:
            logger.info(f"Benchmarking grid {_grid_label(n)} at omega={spec.omega():.4g}")
            rows.extend(_bench_grid(n, spec, rng))
    except Exception as e:
        logger.error(f"Error running benchmark: {e}")
        raise

    command.out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = write_csv(command.out_dir / "bench.csv", BENCH_COLUMNS, [row.model_dump() for row in rows])
    return BenchResult(csv_path=csv_path, rows=rows)
