import logging
from pathlib import Path
from typing import Optional

import numpy as np

from ..constants import HISTORY_COLUMNS, STAGE_MISFIT_COLUMNS
from ..continuation import run_pipeline
from ..data_types import InvertCommand, InvertResult
from ..errors import InvalidArgumentError
from ..experiment import Experiment, build_experiment, write_config
from ..file_formats import field_image, read_data, write_csv, write_model, write_pgm
from ..gauss_newton import InversionState
from ..misfits import EikonalMisfit, FwiMisfit, ObservedData

logger = logging.getLogger(__name__)


def _data_path(command: InvertCommand) -> Path:
    if command.data_path is not None:
        return command.data_path
    if command.config.data_file is not None:
        return command.config.data_file
    return command.out_dir / "data.jsdt"


def load_observed(path: Path, experiment: Experiment) -> ObservedData:
    """Read a JSDT1 file and check it against the acquisition before any solve"""
    fwi, travel_times = read_data(path)
    geometry = experiment.geometry
    expected = (geometry.n_sources, len(experiment.config.frequencies_hz), geometry.n_receivers)
    if fwi.shape != expected:
        raise InvalidArgumentError(
            f"Data in {path} has shape {fwi.shape} (sources, frequencies, receivers), configuration implies {expected}")
    return ObservedData.from_arrays(fwi, travel_times, experiment.config.noise_fraction, geometry.active_mask)


def _velocity_image(experiment: Experiment, m: np.ndarray) -> np.ndarray:
    return field_image(1.0 / np.sqrt(experiment.grid.unflatten(m)))


def relative_model_error(m: np.ndarray, m_true: Optional[np.ndarray]) -> Optional[float]:
    if m_true is None:
        return None
    return float(np.linalg.norm(m - m_true) / np.linalg.norm(m_true))


def invert(command: InvertCommand) -> InvertResult:
    """
    Run one of the inversion pipelines on recorded data

    Args:
        command: InvertCommand with configuration, mode, output directory and data path

    Returns:
        InvertResult: Output paths, iteration count, final objective and flags
    """
    config = command.config
    out_dir = command.out_dir
    experiment = build_experiment(config, out_dir)
    data = load_observed(_data_path(command), experiment)

    fwi = FwiMisfit(experiment.setup, data)
    eik = EikonalMisfit(experiment.geometry, data, threads=config.threads)

    write_config(out_dir, config)
    checkpoints = out_dir / "checkpoints"
    checkpoints.mkdir(parents=True, exist_ok=True)
    history_path = out_dir / "history.csv"
    stage_misfits_path = out_dir / "stage_misfits.csv"
    grid = experiment.grid

    def checkpoint(state: InversionState) -> None:
        write_model(checkpoints / f"iter_{state.iteration:04d}.jssm", grid.n, grid.h, state.m)
        write_csv(history_path, HISTORY_COLUMNS, state.history)

    m_start = experiment.start_model
    lower, upper = experiment.model_bounds
    state = InversionState(m=m_start, lower=lower, upper=upper, grid=grid, on_iteration=checkpoint)
    write_pgm(out_dir / "start.pgm", _velocity_image(experiment, state.m))

    logger.info(f"Inverting with {command.mode} on grid {grid.n}")
    try:
        run_pipeline(command.mode, state, experiment.schedule, fwi, eik, m_ref=m_start)
    except Exception as e:
        logger.error(f"Error during inversion after {state.iteration} iteration(s): {e}")
        write_csv(history_path, HISTORY_COLUMNS, state.history)
        write_csv(stage_misfits_path, STAGE_MISFIT_COLUMNS, state.stage_misfits)
        raise

    model_path = write_model(out_dir / "model.jssm", grid.n, grid.h, state.m)
    write_csv(history_path, HISTORY_COLUMNS, state.history)
    write_csv(stage_misfits_path, STAGE_MISFIT_COLUMNS, state.stage_misfits)
    write_pgm(out_dir / "final.pgm", _velocity_image(experiment, state.m))
    m_true = experiment.truth_model
    if m_true is not None:
        write_pgm(out_dir / "truth.pgm", field_image(experiment.truth_velocity))

    error = relative_model_error(state.m, m_true)
    if error is not None:
        logger.info(f"Relative model error {error:.4f}")
    final_phi = float(state.history[-1]["phi_total"]) if state.history else None
    return InvertResult(
        model_path=model_path,
        history_path=history_path,
        stage_misfits_path=stage_misfits_path,
        iterations=state.iteration,
        final_phi=final_phi,
        flags=sorted(set(state.flags)),
        relative_model_error=error,
    )
