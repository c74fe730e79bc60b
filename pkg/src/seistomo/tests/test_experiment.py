import pytest
import tempfile
from pathlib import Path

import numpy as np

from ..modules.data_types import ModelSpec, load_run_config, parse_run_config
from ..modules.errors import InvalidArgumentError
from ..modules.experiment import build_experiment, build_velocity, write_config
from ..modules.file_formats import write_model
from ..modules.mesh_model import RegularGrid

SMALL = {
    "grid": {"n": [21, 11], "h": [20.0, 20.0]},
    "truth": {"generator": "lens", "background": 2000.0, "contrast": 0.1, "sub_lens_contrast": -0.05},
    "start": {"generator": "constant", "velocity": 2000.0},
    "acquisition": {"n_sources": 3, "n_receivers": 10, "offset_min": 0.0, "offset_max": 1e6},
    "frequencies_hz": [3.0, 5.0],
    "padding": {"pad": [6, 6, 0, 6], "layer_width": 5},
    "solver": {"method": "dense_lu_small"},
    "schedule": {"velocity_bounds": [1500.0, 2500.0], "f_low": 1, "batch_size": 2, "sweeps": 1},
}


@pytest.fixture
def temp_dir():
    with tempfile.TemporaryDirectory() as d:
        yield Path(d)


def _config(**overrides):
    return parse_run_config({**SMALL, **overrides})


def test_builds_every_piece():
    experiment = build_experiment(_config(), need_truth=True)
    assert experiment.grid.n == (21, 11)
    assert experiment.geometry.n_sources == 3
    assert experiment.setup.pad == ((6, 6), (0, 6))
    assert experiment.schedule.frequencies_hz == (3.0, 5.0)
    np.testing.assert_allclose(experiment.start_model, 1.0 / 2000.0**2)
    assert experiment.truth_model.shape == (21 * 11,)
    assert experiment.model_bounds == pytest.approx((1.0 / 2500.0**2, 1.0 / 1500.0**2))


def test_multigrid_padding_is_made_coarsenable():
    config = _config(padding={"pad": [6, 7, 0, 6], "layer_width": 5}, solver={"method": "mg_bicgstab", "nlevels": 3})
    experiment = build_experiment(config)
    assert experiment.setup.pad == ((6, 10), (0, 6))


def test_rejects_undersampled_frequencies():
    with pytest.raises(InvalidArgumentError) as e:
        build_experiment(_config(frequencies_hz=[3.0, 40.0]))
    assert "points per wavelength" in str(e.value)


def test_rejects_attenuation_wider_than_the_grid():
    with pytest.raises(InvalidArgumentError):
        build_experiment(_config(padding={"pad": [0, 0, 0, 0], "layer_width": 30}))


def test_missing_truth_file(temp_dir):
    config = _config(truth={"generator": "file", "path": str(temp_dir / "missing.jssm")})
    assert build_experiment(config).truth_model is None
    with pytest.raises(OSError):
        build_experiment(config, need_truth=True)


class TestModelFiles:
    def test_reads_squared_slowness(self, temp_dir):
        grid = RegularGrid((21, 11), (20.0, 20.0))
        path = write_model(temp_dir / "m.jssm", grid.n, grid.h, np.full(grid.n, 0.25e-6))
        velocity = build_velocity(grid, ModelSpec(generator="file", path=path))
        np.testing.assert_allclose(velocity, 2000.0, rtol=1e-6)

    def test_grid_mismatch(self, temp_dir):
        path = write_model(temp_dir / "m.jssm", (10, 10), (20.0, 20.0), np.full((10, 10), 0.25e-6))
        with pytest.raises(InvalidArgumentError):
            build_velocity(RegularGrid((21, 11), (20.0, 20.0)), ModelSpec(generator="file", path=path))


def test_written_config_loads_back(temp_dir):
    config = _config(seed=9)
    path = write_config(temp_dir, config)
    assert load_run_config(path) == config
