import math

import numpy as np
import pytest
import scipy.sparse as sp

from ..modules.errors import InvalidArgumentError
from ..modules.helmholtz import assemble_attenuation, build_helmholtz_problem, laplacian
from ..modules.mesh_model import RegularGrid, SlownessSquaredModel
from ..modules.multigrid import (
    CycleSpec,
    build_hierarchy,
    build_hierarchy_from_operator,
    check_coarsenable,
    coarse_solve,
    coarse_shape,
    mg_cycle,
    prolongation,
    prolongation_1d,
)


def _poisson(n=33):
    grid = RegularGrid((n, n), (1.0, 1.0))
    return grid, (-laplacian(grid) + 0.01 * sp.identity(grid.size)).tocsr()


def test_prolongation_1d_interpolates_linear_functions():
    P = prolongation_1d(9)
    assert P.shape == (9, 5)
    coarse = 2.0 * np.arange(5) + 1.0
    np.testing.assert_allclose(P @ coarse, np.arange(9) + 1.0)


def test_prolongation_shape_follows_first_axis_fastest():
    P = prolongation((5, 9))
    assert P.shape == (45, 3 * 5)
    fine = np.asarray(P @ np.ones(15)).ravel()
    np.testing.assert_allclose(fine, 1.0)


class TestCoarsening:
    def test_coarse_shape(self):
        assert coarse_shape((9, 17, 5)) == (5, 9, 3)

    def test_even_axis_rejected(self):
        with pytest.raises(InvalidArgumentError):
            check_coarsenable((8, 9), 2)

    def test_too_small_rejected(self):
        with pytest.raises(InvalidArgumentError):
            check_coarsenable((5, 5), 3)

    def test_single_level_needs_no_coarsening(self):
        check_coarsenable((8, 8), 1)


def test_cycle_spec_validation():
    with pytest.raises(InvalidArgumentError):
        CycleSpec("X")
    with pytest.raises(InvalidArgumentError):
        CycleSpec("W", jacobi_weight=1.5)


def test_galerkin_levels():
    grid, A = _poisson(17)
    h = build_hierarchy_from_operator(A, grid.n, 3)
    assert [lvl.shape for lvl in h.levels] == [(17, 17), (9, 9), (5, 5)]
    P = h.levels[0].prolongation
    np.testing.assert_allclose((P.T @ A @ P).toarray(), h.levels[1].operator.toarray())


@pytest.mark.parametrize("kind", ["V", "W", "K"])
def test_cycles_reduce_poisson_residual(kind):
    grid, A = _poisson()
    h = build_hierarchy_from_operator(A, grid.n, 3)
    rng = np.random.default_rng(0)
    b = rng.standard_normal(grid.size)
    x = np.zeros_like(b)
    spec = CycleSpec(kind)
    for _ in range(10):
        x = mg_cycle(h, spec, b, x)
    assert np.linalg.norm(b - A @ x) < 1e-3 * np.linalg.norm(b)


def test_cycle_handles_blocks_and_complex_data():
    grid, A = _poisson(17)
    h = build_hierarchy_from_operator(A, grid.n, 2)
    rng = np.random.default_rng(1)
    B = rng.standard_normal((grid.size, 3)) + 1j * rng.standard_normal((grid.size, 3))
    apply = h.preconditioner(CycleSpec("V"))
    block = apply(B)
    for j in range(3):
        np.testing.assert_allclose(block[:, j], apply(B[:, j]))


def test_cycle_shape_mismatch():
    grid, A = _poisson(17)
    h = build_hierarchy_from_operator(A, grid.n, 2)
    with pytest.raises(InvalidArgumentError):
        mg_cycle(h, CycleSpec("V"), np.ones(grid.size), np.ones(grid.size - 1))


def _helmholtz_problem(n=17):
    grid = RegularGrid((n, n), (10.0, 10.0))
    model = SlownessSquaredModel(grid, np.full(grid.n, 1.0 / 2000.0**2))
    attenuation = assemble_attenuation(grid, 0.01 * 4.0 * math.pi, 3)
    omega = 2.0 * math.pi * 2000.0 / (12.0 * 10.0)
    return build_helmholtz_problem(model, omega, attenuation)


def test_shifted_hierarchy_adds_imaginary_mass():
    problem = _helmholtz_problem()
    h = build_hierarchy(problem, nlevels=2, shift_factor=0.2)
    difference = (h.levels[0].operator - problem.matrix).diagonal()
    np.testing.assert_allclose(difference, -0.2j * problem.omega**2 * problem.m_vector)
    assert h.shift_factor == 0.2


def test_unshifted_hierarchy_keeps_the_operator():
    problem = _helmholtz_problem()
    h = build_hierarchy(problem, nlevels=2, shift_factor=0.0)
    assert abs(h.levels[0].operator - problem.matrix).max() == 0.0


def test_negative_shift_rejected():
    with pytest.raises(InvalidArgumentError):
        build_hierarchy(_helmholtz_problem(), nlevels=2, shift_factor=-0.1)


def test_coarse_solve_is_exact():
    grid, A = _poisson(17)
    h = build_hierarchy_from_operator(A, grid.n, 3)
    coarse = h.levels[-1].operator
    rng = np.random.default_rng(15)
    B = rng.standard_normal((coarse.shape[0], 3)) + 1j * rng.standard_normal((coarse.shape[0], 3))
    X = coarse_solve(h, B)
    np.testing.assert_allclose(coarse @ X, B, atol=1e-10)
    with pytest.raises(InvalidArgumentError):
        coarse_solve(h, np.ones(coarse.shape[0] + 1))
