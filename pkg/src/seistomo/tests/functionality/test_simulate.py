import pytest
import tempfile
from pathlib import Path

import numpy as np

from ...modules.data_types import SimulateCommand, load_run_config, parse_run_config
from ...modules.errors import InvalidArgumentError
from ...modules.file_formats import read_data, read_model
from ...modules.functionality.simulate import add_noise, simulate

SMALL = {
    "grid": {"n": [21, 11], "h": [20.0, 20.0]},
    "truth": {"generator": "lens", "background": 2000.0, "contrast": 0.1, "sub_lens_contrast": -0.05},
    "start": {"generator": "constant", "velocity": 2000.0},
    "acquisition": {"n_sources": 3, "n_receivers": 10, "offset_min": 50.0, "offset_max": 1e6},
    "frequencies_hz": [3.0, 5.0],
    "padding": {"pad": [6, 6, 0, 6], "layer_width": 5},
    "solver": {"method": "dense_lu_small"},
    "schedule": {"velocity_bounds": [1500.0, 2500.0]},
    "seed": 3,
}


@pytest.fixture
def temp_out_dir():
    with tempfile.TemporaryDirectory() as d:
        yield Path(d) / "run"


def _simulate(out_dir, **overrides):
    config = parse_run_config({**SMALL, **overrides})
    return simulate(SimulateCommand(config=config, out_dir=out_dir))


def test_simulate_writes_every_artifact(temp_out_dir):
    result = _simulate(temp_out_dir)

    assert (result.n_sources, result.n_frequencies, result.n_receivers) == (3, 2, 10)
    assert result.data_path == temp_out_dir / "data.jsdt"
    assert (temp_out_dir / "truth.pgm").exists()
    assert load_run_config(temp_out_dir / "config.json").seed == 3

    fwi, tt = read_data(result.data_path)
    assert fwi.shape == (3, 2, 10)
    assert tt.shape == (3, 10)
    n, _, truth = read_model(result.truth_path)
    assert n == (21, 11)
    assert truth.max() == pytest.approx(1.0 / (2000.0 * 0.95) ** 2, rel=1e-6)


def test_receivers_on_a_source_are_inactive(temp_out_dir):
    result = _simulate(temp_out_dir)
    fwi, tt = read_data(result.data_path)
    # Receivers 0 and 1 lie 0 m and 40 m from source 0, inside the 50 m minimum offset
    assert np.isnan(tt[0, :2]).all() and np.isnan(fwi[0, :, :2]).all()
    assert np.isfinite(tt[0, 2:]).all()
    assert np.isfinite(fwi[0, :, 2:]).all()


def test_seed_makes_data_reproducible(temp_out_dir):
    first = read_data(_simulate(temp_out_dir / "a").data_path)
    second = read_data(_simulate(temp_out_dir / "b").data_path)
    third = read_data(_simulate(temp_out_dir / "c", seed=4).data_path)
    np.testing.assert_array_equal(first[1], second[1])
    assert not np.array_equal(np.nan_to_num(first[1]), np.nan_to_num(third[1]))


def test_noiseless_data_grow_with_offset(temp_out_dir):
    _, tt = read_data(_simulate(temp_out_dir, noise_fraction=0.0).data_path)
    assert np.all(np.diff(tt[0, 2:]) > 0)


def test_undersampled_config_fails_before_writing(temp_out_dir):
    with pytest.raises(InvalidArgumentError):
        _simulate(temp_out_dir, frequencies_hz=[3.0, 40.0])
    assert not (temp_out_dir / "data.jsdt").exists()


class TestAddNoise:
    def test_noise_scales_with_the_trace_peak(self):
        rng = np.random.default_rng(0)
        fwi = np.ones((1, 2, 4000), dtype=complex) * np.array([1.0, 100.0])[None, :, None]
        tt = np.full((1, 4000), 2.0)
        masks = np.ones((1, 4000), dtype=bool)
        noisy_fwi, noisy_tt = add_noise(fwi, tt, masks, 0.1, rng)
        deviation = noisy_fwi - fwi
        for j, peak in enumerate((1.0, 100.0)):
            assert np.std(deviation[0, j]) == pytest.approx(0.1 * peak, rel=0.1)
        assert np.std(noisy_tt - tt) == pytest.approx(0.2, rel=0.1)

    def test_zero_noise_only_masks(self):
        fwi = np.ones((1, 1, 3), dtype=complex)
        tt = np.ones((1, 3))
        masks = np.array([[True, False, True]])
        noisy_fwi, noisy_tt = add_noise(fwi, tt, masks, 0.0, np.random.default_rng(0))
        assert np.isnan(noisy_tt[0, 1]) and np.isnan(noisy_fwi[0, 0, 1])
        assert noisy_tt[0, 0] == 1.0 and noisy_fwi[0, 0, 2] == 1.0
