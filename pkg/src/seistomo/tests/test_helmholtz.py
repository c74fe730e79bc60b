import math

import numpy as np
import pytest

from ..modules.errors import InvalidArgumentError
from ..modules.helmholtz import (
    HelmholtzSolver,
    SolverSettings,
    apply_helmholtz,
    assemble_attenuation,
    build_helmholtz_problem,
    dequantize_fields,
    fwi_jacobian_transpose_vec,
    fwi_jacobian_vec,
    laplacian,
    points_per_wavelength,
    quantize_fields,
    ricker,
    solve_helmholtz,
)
from ..modules.mesh_model import (
    RegularGrid,
    SlownessSquaredModel,
    build_sampling_operator,
    pad_model,
    point_source,
    sample,
)

H = 10.0
VELOCITY = 2000.0
# twelve points per wavelength at VELOCITY
OMEGA = 2.0 * math.pi * VELOCITY / (12.0 * H)


def _problem(n=33, layer_width=6, velocity=None, check_ppw=True):
    grid = RegularGrid((n, n), (H, H))
    velocity = np.full(grid.n, VELOCITY) if velocity is None else velocity
    model = SlownessSquaredModel(grid, 1.0 / velocity**2)
    attenuation = assemble_attenuation(grid, 0.01 * 4.0 * math.pi, layer_width, free_surface=True)
    return build_helmholtz_problem(model, OMEGA, attenuation, check_ppw)


def test_laplacian_annihilates_linear_interior():
    grid = RegularGrid((7, 6), (1.0, 2.0))
    x = grid.node_coordinates()
    u = 2.0 * x[:, 0] - x[:, 1]
    r = (laplacian(grid) @ u).reshape(grid.n, order="F")
    np.testing.assert_allclose(r[1:-1, 1:-1], 0.0, atol=1e-12)


class TestAttenuation:
    def test_free_surface_side_has_no_ramp(self):
        grid = RegularGrid((21, 21), (H, H))
        att = assemble_attenuation(grid, 0.0, 5, free_surface=True)
        profile = att.profile.reshape(grid.n, order="F")
        assert np.all(profile[10, :5] == 0.0)
        assert profile[10, -1] == pytest.approx(1.0)
        assert profile[0, 10] == pytest.approx(1.0)

    def test_gamma_scales_with_frequency(self):
        grid = RegularGrid((21, 21), (H, H))
        att = assemble_attenuation(grid, 0.5, 5, strength=2.0)
        gamma = att.gamma(3.0)
        assert gamma.min() == pytest.approx(0.5)
        assert gamma.max() == pytest.approx(0.5 + 2.0 * 3.0 * att.profile.max())

    def test_layer_too_wide(self):
        grid = RegularGrid((9, 9), (H, H))
        with pytest.raises(InvalidArgumentError):
            assemble_attenuation(grid, 0.0, 5)


def test_points_per_wavelength_check():
    assert points_per_wavelength(1.0 / VELOCITY**2, OMEGA, H) == pytest.approx(12.0)
    slow = np.full((33, 33), 0.5 * VELOCITY)
    with pytest.raises(InvalidArgumentError):
        _problem(velocity=slow)
    _problem(velocity=slow, check_ppw=False)


def test_ricker_spectrum_peaks_at_peak_frequency():
    wavelet = ricker(8.0)
    omegas = np.linspace(1.0, 200.0, 4000)
    spectrum = wavelet.spectrum(omegas)
    assert np.all(spectrum >= 0)
    assert omegas[np.argmax(spectrum)] == pytest.approx(2.0 * math.pi * 8.0, rel=1e-2)
    assert wavelet.time(0.0) == pytest.approx(1.0)


def test_dense_solve_satisfies_system():
    problem = _problem(n=21, layer_width=4)
    q = point_source(problem.grid, (100.0, 50.0))
    batch = solve_helmholtz(problem, q, method="dense_lu_small")
    residual = apply_helmholtz(problem, batch.fields[:, 0]) - q
    assert np.linalg.norm(residual) <= 1e-9 * np.linalg.norm(q)


@pytest.mark.parametrize("method", ["mg_bicgstab", "mg_fgmres_w", "mg_fgmres_k"])
def test_multigrid_solvers_match_direct_solve(method):
    problem = _problem()
    grid = problem.grid
    Q = np.stack([point_source(grid, (160.0, 20.0)), point_source(grid, (80.0, 200.0))], axis=1)
    reference, _ = HelmholtzSolver(problem, SolverSettings(method="dense_lu_small", dense_lu_max_nodes=2000)).solve(Q)
    solver = HelmholtzSolver(problem, SolverSettings(method=method, tol=1e-10, maxit=400, nlevels=2))
    U, report = solver.solve(Q)
    assert report.all_converged
    assert solver.setup_time >= 0.0
    assert np.linalg.norm(U - reference) <= 1e-5 * np.linalg.norm(reference)


@pytest.fixture(scope="module")
def ten_ppw_solver():
    grid = RegularGrid((65, 65), (H, H))
    model = SlownessSquaredModel(grid, np.full(grid.n, 1.0 / VELOCITY**2))
    attenuation = assemble_attenuation(grid, 0.02 * math.pi, 8, free_surface=False)
    omega = 2.0 * math.pi * VELOCITY / (10.0 * H)
    problem = build_helmholtz_problem(model, omega, attenuation, check_ppw=False)
    settings = SolverSettings(method="mg_bicgstab", tol=1e-6, maxit=200, nlevels=3, shift_factor=0.2,
                              pre_relax=2, post_relax=2)
    solver = HelmholtzSolver(problem, settings)
    rng = np.random.default_rng(10)
    positions = rng.uniform(12 * H, 52 * H, size=(16, 2))
    Q = np.stack([point_source(grid, x) for x in positions], axis=1)
    _, single = solver.solve(Q[:, :1])
    return solver, Q, single


@pytest.mark.parametrize("block", [1, 4, 16])
def test_shifted_w_cycle_iterations_do_not_grow_with_block_size(ten_ppw_solver, block):
    solver, Q, single = ten_ppw_solver
    U, report = solver.solve(Q[:, :block])
    assert report.all_converged
    assert report.iterations <= 200
    residual = Q[:, :block] - apply_helmholtz(solver.problem, U)
    assert np.all(np.linalg.norm(residual, axis=0) <= 1e-6 * np.linalg.norm(Q[:, :block], axis=0) * (1 + 1e-9))
    assert report.iterations <= single.iterations + 2


def test_dense_method_rejects_large_grids():
    problem = _problem()
    with pytest.raises(InvalidArgumentError):
        HelmholtzSolver(problem, SolverSettings(method="dense_lu_small", dense_lu_max_nodes=100))


def test_unknown_method():
    with pytest.raises(InvalidArgumentError):
        SolverSettings(method="gauss_seidel")


class TestSensitivities:
    @pytest.fixture
    def setup(self):
        core = RegularGrid((15, 11), (H, H))
        rng = np.random.default_rng(0)
        velocity = VELOCITY * (1.0 + 0.05 * rng.random(core.n))
        m = (1.0 / velocity**2).ravel(order="F")
        pad = (3, 3, 0, 3)
        receivers = np.array([[x, 10.0] for x in (20.0, 60.0, 100.0, 140.0)])
        return core, m, pad, receivers

    def _data(self, core, m, pad, receivers):
        padded = pad_model(SlownessSquaredModel(core, m), pad)
        grid = padded.padded.grid
        attenuation = assemble_attenuation(grid, 0.1, 2)
        problem = build_helmholtz_problem(padded.padded, OMEGA, attenuation)
        solver = HelmholtzSolver(problem, SolverSettings(method="dense_lu_small"))
        q = point_source(grid, (70.0, 10.0))
        u, _ = solver.solve(q)
        sampling = build_sampling_operator(grid, receivers)
        return solver, u, sampling, padded, sample(sampling, u)

    def test_jacobian_matches_finite_difference(self, setup):
        core, m, pad, receivers = setup
        rng = np.random.default_rng(1)
        v = rng.standard_normal(core.size) * m.mean()
        solver, u, sampling, padded, _ = self._data(core, m, pad, receivers)
        Jv = fwi_jacobian_vec(solver, u, v, sampling, padded)
        eps = 1e-4
        d_plus = self._data(core, m + eps * v, pad, receivers)[4]
        d_minus = self._data(core, m - eps * v, pad, receivers)[4]
        fd = (d_plus - d_minus) / (2.0 * eps)
        assert np.linalg.norm(Jv - fd) <= 1e-4 * np.linalg.norm(fd)

    def test_transpose_is_adjoint(self, setup):
        core, m, pad, receivers = setup
        rng = np.random.default_rng(2)
        solver, u, sampling, padded, _ = self._data(core, m, pad, receivers)
        v = rng.standard_normal(core.size)
        w = rng.standard_normal(4) + 1j * rng.standard_normal(4)
        mask = np.array([True, True, False, True])
        Jv = fwi_jacobian_vec(solver, u, v, sampling, padded, mask)
        JTw = fwi_jacobian_transpose_vec(solver, u, w, sampling, padded, mask)
        assert JTw.shape == (core.size,)
        assert np.real(np.vdot(w, Jv)) == pytest.approx(v @ JTw, rel=1e-8)
        assert Jv[2] == 0.0


def test_quantized_fields_stay_close():
    rng = np.random.default_rng(3)
    U = rng.standard_normal((50, 3)) + 1j * rng.standard_normal((50, 3))
    packed, scales = quantize_fields(U)
    restored = dequantize_fields(packed, scales)
    assert np.abs(restored - U).max() <= 1e-3 * np.abs(U).max()
