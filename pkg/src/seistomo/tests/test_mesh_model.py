import numpy as np
import pytest

from ..modules.errors import InvalidArgumentError
from ..modules.mesh_model import (
    AcquisitionGeometry,
    RegularGrid,
    SlownessSquaredModel,
    build_sampling_operator,
    coarsenable_pad,
    normalize_pad,
    pad_model,
    point_source,
    sample,
    sample_adjoint,
    slowness_squared_to_velocity,
    velocity_bounds_to_model_bounds,
    velocity_to_slowness_squared,
)


@pytest.fixture
def grid():
    return RegularGrid((9, 5), (10.0, 20.0))


class TestRegularGrid:
    def test_flatten_is_first_axis_fastest(self, grid):
        values = np.arange(grid.size, dtype=float).reshape(grid.n, order="F")
        vector = grid.flatten(values)
        assert vector[1] == values[1, 0]
        assert vector[grid.n[0]] == values[0, 1]
        np.testing.assert_array_equal(grid.unflatten(vector), values)

    def test_rejects_too_few_nodes(self):
        with pytest.raises(InvalidArgumentError):
            RegularGrid((2, 5), (1.0, 1.0))

    def test_rejects_nonpositive_spacing(self):
        with pytest.raises(InvalidArgumentError):
            RegularGrid((5, 5), (1.0, 0.0))

    def test_nearest_node_ties_snap_low(self, grid):
        assert grid.nearest_node((15.0, 0.0)) == (1, 0)
        assert grid.nearest_node((16.0, 31.0)) == (2, 2)

    def test_outside_position_rejected(self, grid):
        with pytest.raises(InvalidArgumentError):
            grid.nearest_node((-5.0, 0.0))


def test_velocity_round_trip(grid):
    model = velocity_to_slowness_squared(grid, np.full(grid.n, 2000.0))
    assert np.allclose(model.values, 1.0 / 2000.0**2)
    low, high = velocity_bounds_to_model_bounds(1500.0, 4500.0)
    assert low == pytest.approx(1.0 / 4500.0**2)
    assert high == pytest.approx(1.0 / 1500.0**2)


def test_random_velocity_round_trip(grid):
    velocity = np.random.default_rng(17).uniform(1500.0, 4500.0, grid.n)
    back = slowness_squared_to_velocity(velocity_to_slowness_squared(grid, velocity))
    np.testing.assert_allclose(back, velocity, rtol=1e-14)
    with pytest.raises(InvalidArgumentError):
        velocity_to_slowness_squared(grid, -velocity)


def test_model_rejects_nonpositive_values(grid):
    values = np.full(grid.n, 1e-7)
    values[0, 0] = 0.0
    with pytest.raises(InvalidArgumentError):
        SlownessSquaredModel(grid, values)


class TestPadding:
    def test_pad_replicates_edges(self, grid):
        rng = np.random.default_rng(1)
        core = SlownessSquaredModel(grid, 1e-7 + 1e-8 * rng.random(grid.n))
        padded = pad_model(core, (2, 3, 0, 4))
        assert padded.padded.grid.n == (14, 9)
        values = padded.padded.values
        np.testing.assert_array_equal(values[:2, :5], np.repeat(core.values[:1, :], 2, axis=0))
        np.testing.assert_array_equal(values[-3:, -4:], np.full((3, 4), core.values[-1, -1]))
        np.testing.assert_array_equal(padded.restrict(padded.padded.vector), core.values)

    def test_extension_adjoint(self, grid):
        rng = np.random.default_rng(2)
        core = SlownessSquaredModel(grid, np.full(grid.n, 1e-7))
        padded = pad_model(core, (3, 3, 0, 3))
        x = rng.standard_normal(grid.size)
        y = rng.standard_normal(padded.padded.grid.size)
        assert padded.extend(x) @ y == pytest.approx(x @ padded.extend_adjoint(y))

    def test_padded_origin_shifts(self, grid):
        core = SlownessSquaredModel(grid, np.full(grid.n, 1e-7))
        padded = pad_model(core, (2, 2, 1, 1))
        assert padded.padded.grid.origin == (-20.0, -20.0)

    def test_coarsenable_pad_grows_high_side(self):
        pairs = coarsenable_pad((64, 32), (10, 10, 0, 10), 3)
        assert pairs[0][0] == 10 and pairs[1][0] == 0
        for nk, (lo, hi) in zip((64, 32), pairs):
            assert (nk + lo + hi - 1) % 4 == 0

    def test_normalize_pad_rejects_wrong_length(self):
        with pytest.raises(InvalidArgumentError):
            normalize_pad(2, (1, 2, 3))


class TestSampling:
    def test_node_receivers_pick_values(self, grid):
        u = np.arange(grid.size, dtype=float)
        receivers = np.array([grid.node_position((3, 2)), grid.node_position((8, 4))])
        op = build_sampling_operator(grid, receivers)
        np.testing.assert_allclose(sample(op, u), [u[grid.flat_index((3, 2))], u[grid.flat_index((8, 4))]])

    def test_interpolation_is_exact_for_linear_fields(self, grid):
        x = grid.node_coordinates()
        u = 3.0 * x[:, 0] - 2.0 * x[:, 1] + 1.0
        receivers = np.array([[12.5, 7.0], [55.0, 61.0]])
        op = build_sampling_operator(grid, receivers)
        expected = 3.0 * receivers[:, 0] - 2.0 * receivers[:, 1] + 1.0
        np.testing.assert_allclose(sample(op, u), expected)

    def test_adjoint_identity(self, grid):
        rng = np.random.default_rng(3)
        receivers = np.array([[12.5, 7.0], [55.0, 61.0], [80.0, 0.0]])
        op = build_sampling_operator(grid, receivers)
        mask = np.array([True, False, True])
        u = rng.standard_normal(grid.size)
        d = rng.standard_normal(3)
        assert sample(op, u, mask) @ d == pytest.approx(u @ sample_adjoint(op, d, mask))

    def test_mask_zeroes_inactive(self, grid):
        op = build_sampling_operator(grid, np.array([[10.0, 20.0], [20.0, 20.0]]))
        values = sample(op, np.ones(grid.size), np.array([True, False]))
        np.testing.assert_allclose(values, [1.0, 0.0])


def test_point_source_scaling(grid):
    q = point_source(grid, (30.0, 40.0))
    assert np.count_nonzero(q) == 1
    assert q[grid.flat_index((3, 2))] == pytest.approx(1.0 / (10.0 * 20.0))


def test_active_mask_offset_window(grid):
    geometry = AcquisitionGeometry(
        grid=grid,
        sources=np.array([[0.0, 0.0]]),
        receivers=np.array([[0.0, 0.0], [30.0, 0.0], [80.0, 0.0]]),
        offset_min=10.0,
        offset_max=50.0,
    )
    np.testing.assert_array_equal(geometry.active_mask, [[False, True, False]])


def test_geometry_rejects_outside_receiver(grid):
    with pytest.raises(InvalidArgumentError):
        AcquisitionGeometry(grid=grid, sources=np.array([[0.0, 0.0]]), receivers=np.array([[100.0, 0.0]]))
