"""
Experiment Module

Turns a validated RunConfig into solver-ready objects: grid, truth and start
models, acquisition, the waveform setup and the continuation schedule. Every
module precondition is checked here, before any solve runs.
"""

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from .cache_layer import FieldCache
from .constants import MIN_POINTS_PER_WAVELENGTH
from .continuation import ContinuationSchedule
from .data_types import ModelSpec, RunConfig
from .errors import InvalidArgumentError
from .file_formats import read_model
from .helmholtz import SolverSettings, assemble_attenuation, points_per_wavelength, ricker
from .mesh_model import (
    AcquisitionGeometry,
    RegularGrid,
    coarsenable_pad,
    normalize_pad,
    padded_grid,
    velocity_bounds_to_model_bounds,
)
from .misfits import FwiSetup
from .synthetic import constant_velocity, layered_velocity, lens_velocity, linear_velocity, top_surface_acquisition

logger = logging.getLogger(__name__)


def build_grid(config: RunConfig) -> RegularGrid:
    spec = config.grid
    return RegularGrid(tuple(spec.n), tuple(spec.h), None if spec.origin is None else tuple(spec.origin))


def build_velocity(grid: RegularGrid, spec: ModelSpec) -> np.ndarray:
    """Grid-shaped velocity (m/s) from a builtin generator or a JSSM1 squared-slowness file"""
    if spec.generator == "constant":
        return constant_velocity(grid, spec.velocity)
    if spec.generator == "linear":
        return linear_velocity(grid, spec.v_top, spec.v_bottom)
    if spec.generator == "layered":
        return layered_velocity(grid, spec.velocities, spec.interfaces)
    if spec.generator == "lens":
        return lens_velocity(grid, spec.background, spec.contrast, spec.sub_lens_contrast)

    n, h, values = read_model(spec.path)
    if tuple(n) != grid.n:
        raise InvalidArgumentError(f"Model file {spec.path} has grid {n}, configuration says {grid.n}")
    if np.any(values <= 0):
        raise InvalidArgumentError(f"Model file {spec.path} holds non-positive squared slowness")
    return 1.0 / np.sqrt(values)


@dataclass
class Experiment:
    config: RunConfig
    grid: RegularGrid
    geometry: AcquisitionGeometry
    setup: FwiSetup
    schedule: ContinuationSchedule
    start_velocity: np.ndarray
    truth_velocity: Optional[np.ndarray]
    model_bounds: Tuple[float, float]

    @property
    def start_model(self) -> np.ndarray:
        return self.grid.flatten(1.0 / self.start_velocity**2)

    @property
    def truth_model(self) -> Optional[np.ndarray]:
        return None if self.truth_velocity is None else self.grid.flatten(1.0 / self.truth_velocity**2)


def solver_settings(config: RunConfig) -> SolverSettings:
    s = config.solver
    return SolverSettings(
        method=s.method, tol=s.tol, maxit=s.maxit, nlevels=s.nlevels, shift_factor=s.shift_factor,
        pre_relax=s.pre_relax, post_relax=s.post_relax, jacobi_weight=s.jacobi_weight,
        fgmres_restart=s.fgmres_restart,
    )


def field_cache(config: RunConfig, out_dir: Optional[Path] = None) -> Optional[FieldCache]:
    if config.solver.field_cache_dir is None:
        return None
    cache_dir = config.solver.field_cache_dir
    if not cache_dir.is_absolute() and out_dir is not None:
        cache_dir = out_dir / cache_dir
    return FieldCache(memory_cache_size=2 * len(config.frequencies_hz), disk_cache_dir=cache_dir,
                      disk_precision=config.solver.field_precision)


def build_experiment(config: RunConfig, out_dir: Optional[Path] = None, need_truth: bool = False) -> Experiment:
    """
    Build and cross-check everything a simulate or invert run needs

    Args:
        config: Validated configuration
        out_dir: Output directory, anchors a relative field cache directory
        need_truth: Fail when the truth model cannot be built

    Returns:
        Experiment: Ready-to-use objects; no solve has run yet
    """
    grid = build_grid(config)
    start = build_velocity(grid, config.start)
    try:
        truth = build_velocity(grid, config.truth)
    except (InvalidArgumentError, OSError) as e:
        if need_truth:
            raise
        logger.info(f"No truth model available: {e}")
        truth = None

    acq = config.acquisition
    geometry = top_surface_acquisition(grid, acq.n_sources, acq.n_receivers, acq.depth_index,
                                       acq.offset_min, acq.offset_max)

    settings = solver_settings(config)
    pad = config.padding.pad
    if settings.method == "dense_lu_small":
        pairs = normalize_pad(grid.ndim, pad)
    else:
        pairs = coarsenable_pad(grid.n, pad, settings.nlevels)
    padded = padded_grid(grid, pairs)
    # Fails early on layers too wide for the padded grid
    assemble_attenuation(padded, config.base_attenuation, config.padding.layer_width, config.padding.free_surface)

    v_min, v_max = config.schedule.velocity_bounds
    lower, upper = velocity_bounds_to_model_bounds(v_min, v_max)
    omega_max = 2.0 * np.pi * max(config.frequencies_hz)
    slowest = min(v_min, float(start.min()), float(truth.min()) if truth is not None else np.inf)
    ppw = points_per_wavelength(1.0 / slowest**2, omega_max, min(grid.h))
    if ppw < MIN_POINTS_PER_WAVELENGTH:
        raise InvalidArgumentError(
            f"{max(config.frequencies_hz):g} Hz leaves {ppw:.2f} points per wavelength at {slowest:g} m/s; "
            f"at least {MIN_POINTS_PER_WAVELENGTH:g} required")

    setup = FwiSetup(
        geometry=geometry,
        frequencies_hz=config.frequencies_hz,
        pad=pairs,
        layer_width=config.padding.layer_width,
        base_attenuation=config.base_attenuation,
        absorbing_strength=config.padding.absorbing_strength,
        free_surface=config.padding.free_surface,
        wavelet=ricker(config.ricker_peak_hz),
        solver=settings,
        threads=config.threads,
        field_cache=field_cache(config, out_dir),
    )

    sched = config.schedule
    schedule = ContinuationSchedule(
        frequencies_hz=tuple(config.frequencies_hz),
        f_low=sched.f_low,
        batch_size=sched.batch_size,
        sweeps=sched.sweeps,
        gn_stage_one=sched.gn_stage_one,
        gn_per_batch=sched.gn_per_batch,
        pcg_iterations=sched.pcg_iterations,
        beta_stage_one=sched.beta_stage_one,
        beta_stage_two=sched.beta_stage_two,
        alpha_start=sched.alpha_start,
        alpha_decay=sched.alpha_decay,
    )
    return Experiment(config, grid, geometry, setup, schedule, start, truth, (lower, upper))


def write_config(out_dir: Path, config: RunConfig) -> Path:
    """Echo the effective configuration into the output directory"""
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "config.json"
    path.write_text(json.dumps(config.model_dump(mode="json"), indent=2) + "\n")
    return path
