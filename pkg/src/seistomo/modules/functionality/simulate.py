import logging
from typing import Tuple

import numpy as np

from ..data_types import SimulateCommand, SimulateResult
from ..experiment import build_experiment, write_config
from ..file_formats import field_image, write_data, write_model, write_pgm
from ..misfits import EikonalMisfit, FwiMisfit

logger = logging.getLogger(__name__)


def add_noise(fwi: np.ndarray, travel_times: np.ndarray, masks: np.ndarray, noise_fraction: float,
              rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """
    Gaussian noise scaled per trace by the trace peak

    Waveform traces (source, frequency) get complex noise with variance
    (eta * max|d|)^2 split evenly between the real and imaginary parts;
    travel-time traces get real noise of standard deviation eta * max(t).
    Inactive receivers are set to NaN.
    """
    fwi = np.array(fwi, dtype=np.complex128)
    travel_times = np.array(travel_times, dtype=np.float64)
    if noise_fraction > 0:
        peak = np.where(masks[:, None, :], np.abs(fwi), 0.0).max(axis=2, keepdims=True)
        sigma = noise_fraction * peak / np.sqrt(2.0)
        fwi = fwi + sigma * (rng.standard_normal(fwi.shape) + 1j * rng.standard_normal(fwi.shape))
        tt_peak = np.where(masks, travel_times, 0.0).max(axis=1, keepdims=True)
        travel_times = travel_times + noise_fraction * tt_peak * rng.standard_normal(travel_times.shape)
    fwi[~np.broadcast_to(masks[:, None, :], fwi.shape)] = np.nan
    travel_times[~masks] = np.nan
    return fwi, travel_times


def simulate(command: SimulateCommand) -> SimulateResult:
    """
    Generate noisy synthetic data for the configured truth model

    Args:
        command: SimulateCommand with the run configuration and output directory

    Returns:
        SimulateResult: Paths of the data and truth files and the data dimensions
    """
    config = command.config
    out_dir = command.out_dir
    experiment = build_experiment(config, out_dir, need_truth=True)
    m_true = experiment.truth_model
    geometry = experiment.geometry

    data_path = out_dir / "data.jsdt"
    truth_path = out_dir / "truth.jssm"
    image_path = out_dir / "truth.pgm"
    try:
        fwi = FwiMisfit(experiment.setup)
        eik = EikonalMisfit(geometry, threads=config.threads)
        logger.info(f"Simulating {geometry.n_sources} sources at {len(config.frequencies_hz)} frequencies")
        clean_fwi = fwi.predict(m_true)
        clean_tt = eik.predict(m_true)

        rng = np.random.default_rng(config.seed)
        noisy_fwi, noisy_tt = add_noise(clean_fwi, clean_tt, geometry.active_mask, config.noise_fraction, rng)

        write_config(out_dir, config)
        write_data(data_path, noisy_fwi, noisy_tt)
        write_model(truth_path, experiment.grid.n, experiment.grid.h, m_true)
        write_pgm(image_path, field_image(experiment.truth_velocity))
        logger.info(f"Wrote synthetic data to {data_path}")
    except Exception as e:
        logger.error(f"Error simulating data: {e}")
        for path in (data_path, truth_path, image_path):
            path.unlink(missing_ok=True)
        raise

    return SimulateResult(
        data_path=data_path,
        truth_path=truth_path,
        n_sources=geometry.n_sources,
        n_frequencies=len(config.frequencies_hz),
        n_receivers=geometry.n_receivers,
    )
