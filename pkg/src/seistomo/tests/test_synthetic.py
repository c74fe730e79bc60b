import math

import numpy as np
import pytest

from ..modules.errors import InvalidArgumentError
from ..modules.mesh_model import RegularGrid
from ..modules.synthetic import (
    constant_velocity,
    layered_velocity,
    lens_velocity,
    linear_velocity,
    surface_positions,
    top_surface_acquisition,
)


@pytest.fixture
def grid():
    return RegularGrid((41, 21), (10.0, 10.0))


def test_constant(grid):
    assert np.all(constant_velocity(grid, 1800.0) == 1800.0)
    with pytest.raises(InvalidArgumentError):
        constant_velocity(grid, 0.0)


def test_linear_grows_with_depth(grid):
    v = linear_velocity(grid, 1500.0, 3000.0)
    np.testing.assert_allclose(v[:, 0], 1500.0)
    np.testing.assert_allclose(v[:, -1], 3000.0)
    assert np.all(np.diff(v, axis=1) > 0)


class TestLayered:
    def test_equal_thickness_by_default(self, grid):
        v = layered_velocity(grid, [1000.0, 2000.0])
        assert v[0, 0] == 1000.0 and v[0, -1] == 2000.0
        assert set(np.unique(v)) == {1000.0, 2000.0}
        assert np.all(v[:, 9] == 1000.0) and np.all(v[:, 11] == 2000.0)

    def test_explicit_interfaces(self, grid):
        v = layered_velocity(grid, [1.0, 2.0, 3.0], [0.25, 0.5])
        assert list(v[0, [0, 6, 15]]) == [1.0, 2.0, 3.0]

    @pytest.mark.parametrize("interfaces", [[0.5], [0.6, 0.4], [0.0, 0.5], [0.5, 1.0]])
    def test_bad_interfaces(self, grid, interfaces):
        with pytest.raises(InvalidArgumentError):
            layered_velocity(grid, [1.0, 2.0, 3.0], interfaces)


class TestLens:
    def test_lens_and_slow_zone(self, grid):
        v = lens_velocity(grid, 2000.0, 0.5, -0.1)
        assert v[0, 0] == 2000.0
        assert v[20, 7] == pytest.approx(3000.0)
        assert v[20, 13] == pytest.approx(1800.0)

    def test_rejects_negative_velocity(self, grid):
        with pytest.raises(InvalidArgumentError):
            lens_velocity(grid, 2000.0, -1.0)

    def test_3d(self):
        v = lens_velocity(RegularGrid((11, 11, 21), (10.0, 10.0, 10.0)))
        assert v[5, 5, 7] > v[0, 0, 0] > v[5, 5, 13]


def test_surface_positions_skip_the_edges(grid):
    points = surface_positions(grid, 5)
    np.testing.assert_allclose(points[:, 0], [10.0, 100.0, 200.0, 300.0, 390.0])
    np.testing.assert_allclose(points[:, 1], 10.0)


def test_surface_positions_3d():
    grid = RegularGrid((11, 11, 5), (10.0, 10.0, 10.0))
    points = surface_positions(grid, 3, depth_index=2)
    assert points.shape == (9, 3)
    assert np.all(points[:, 2] == 20.0)


def test_surface_positions_bad_depth(grid):
    with pytest.raises(InvalidArgumentError):
        surface_positions(grid, 3, depth_index=21)


def test_acquisition_offset_window(grid):
    geometry = top_surface_acquisition(grid, 2, 5, offset_min=50.0, offset_max=250.0)
    mask = geometry.active_mask
    assert mask.shape == (2, 5)
    # Source 0 sits on receiver 0
    assert not mask[0, 0]
    assert mask[0, 1] and mask[0, 2]
    assert not mask[0, 4]


def test_acquisition_without_window(grid):
    geometry = top_surface_acquisition(grid, 3, 4, offset_min=0.0, offset_max=math.inf)
    assert geometry.active_mask.all()
