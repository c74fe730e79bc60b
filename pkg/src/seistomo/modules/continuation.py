"""
Continuation Module

Frequency continuation and the three inversion pipelines built on it:
FWI only, travel-time tomography followed by FWI, and the two-stage joint
inversion (a smooth travel-time-plus-low-frequency start, then sweeps over
frequency batches with a first-order smoothness penalty).
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .constants import (
    ALPHA_DECAY,
    ALPHA_START,
    BATCH_SIZE,
    BETA_STAGE_ONE,
    BETA_STAGE_TWO,
    F_LOW,
    GN_STAGE_ONE,
    GN_STAGE_TWO,
    PCG_ITERATIONS,
    SWEEPS,
)
from .errors import InvalidArgumentError
from .gauss_newton import GnSettings, InversionState, projected_gauss_newton
from .mesh_model import RegularGrid
from .misfits import EikonalMisfit, FwiMisfit, JointObjective
from .regularizers import Regularizer, RegularizerConfig

logger = logging.getLogger(__name__)

PIPELINES = ("fwi_only", "tomo_then_fwi", "joint_two_stage")


@dataclass(frozen=True)
class ContinuationSchedule:
    frequencies_hz: Tuple[float, ...]
    f_low: int = F_LOW
    batch_size: int = BATCH_SIZE
    sweeps: int = SWEEPS
    gn_stage_one: int = GN_STAGE_ONE
    gn_per_batch: int = GN_STAGE_TWO
    pcg_iterations: int = PCG_ITERATIONS
    beta_stage_one: float = BETA_STAGE_ONE
    beta_stage_two: float = BETA_STAGE_TWO
    alpha_start: float = ALPHA_START
    alpha_decay: float = ALPHA_DECAY

    def __post_init__(self):
        freqs = tuple(float(f) for f in self.frequencies_hz)
        object.__setattr__(self, "frequencies_hz", freqs)
        if not freqs:
            raise InvalidArgumentError("Schedule needs at least one frequency")
        if any(b <= a for a, b in zip(freqs, freqs[1:])):
            raise InvalidArgumentError(f"Frequencies must be strictly increasing, got {list(freqs)}")
        if not 1 <= self.f_low <= len(freqs):
            raise InvalidArgumentError(f"f_low must lie in [1, {len(freqs)}], got {self.f_low}")
        if not 1 <= self.batch_size <= 3:
            raise InvalidArgumentError(f"batch_size must lie in [1, 3], got {self.batch_size}")
        for name in ("sweeps", "pcg_iterations"):
            if getattr(self, name) < 1:
                raise InvalidArgumentError(f"{name} must be at least 1")
        for name in ("gn_stage_one", "gn_per_batch"):
            if getattr(self, name) < 0:
                raise InvalidArgumentError(f"{name} must be nonnegative")
        if self.beta_stage_one < 0 or self.beta_stage_two < 0:
            raise InvalidArgumentError("beta values must be nonnegative")
        if self.alpha_start < 0 or self.alpha_decay <= 0:
            raise InvalidArgumentError("alpha_start must be nonnegative and alpha_decay positive")

    @property
    def n_frequencies(self) -> int:
        return len(self.frequencies_hz)

    def alpha(self, sweep: int) -> float:
        """Regularization weight of a stage-II sweep (1-based)"""
        return self.alpha_start / self.alpha_decay ** (sweep - 1)


@dataclass(frozen=True)
class FrequencyBatch:
    indices: Tuple[int, ...]
    include_travel_times: bool = False

    @property
    def label(self) -> str:
        parts = (["tt"] if self.include_travel_times else []) + [str(j) for j in self.indices]
        return "+".join(parts)


def frequency_batches(n_frequencies: int, batch_size: int, include_travel_times: bool = False) -> List[FrequencyBatch]:
    """
    Sliding windows ending at each frequency in turn

    Window k holds frequencies max(0, k - batch_size)..k-1. Travel times take
    the free slot of the short windows at the start when requested.
    """
    batches = []
    for k in range(1, n_frequencies + 1):
        start = max(0, k - batch_size)
        indices = tuple(range(start, k))
        with_tt = include_travel_times and start == 0 and len(indices) < batch_size
        batches.append(FrequencyBatch(indices, with_tt))
    return batches


@dataclass
class RegularizerBank:
    """Regularizers reused across batches, keyed by (kind, alpha)"""
    grid: RegularGrid
    m_ref: Optional[np.ndarray] = None
    _cache: Dict[Tuple[str, float], Regularizer] = field(default_factory=dict, repr=False)

    def get(self, kind: str, alpha: float) -> Regularizer:
        key = (kind, float(alpha))
        if key not in self._cache:
            self._cache[key] = Regularizer(self.grid, RegularizerConfig(kind, alpha, self.m_ref))
        return self._cache[key]


def _record_stage(state: InversionState, fwi: Optional[FwiMisfit], eik: Optional[EikonalMisfit],
                  stage: str, sweep: int, label: str) -> None:
    row = {
        "stage": stage,
        "sweep": sweep,
        "freq_batch": label,
        "phi_fwi_all": fwi.value(state.m) if fwi is not None else "",
        "phi_eik_all": eik.value(state.m) if eik is not None and eik.data is not None else "",
    }
    state.stage_misfits.append(row)
    logger.info(f"After {stage} sweep {sweep} batch {label}: phi_fwi(all)={row['phi_fwi_all']} "
                f"phi_eik(all)={row['phi_eik_all']}")


def frequency_continuation(state: InversionState,
                           schedule: ContinuationSchedule,
                           fwi: FwiMisfit,
                           eik: Optional[EikonalMisfit] = None,
                           bank: Optional[RegularizerBank] = None,
                           kind: str = "R2_gradient",
                           alpha: Optional[float] = None,
                           beta: Optional[float] = None,
                           stage: str = "fwi",
                           sweep: int = 1,
                           include_travel_times: bool = False) -> InversionState:
    """
    One pass over the frequencies, each batch warm-started from the last

    Args:
        state: Model and bounds, updated in place
        schedule: Frequencies, batch size and iteration counts
        fwi: Waveform misfit over all scheduled frequencies
        eik: Travel-time misfit joined to the first batches when include_travel_times
        bank: Regularizer store, built on the core grid when omitted
        kind: Regularizer kind for every batch
        alpha: Regularization weight, the sweep's scheduled value when omitted
        beta: Travel-time weight, the stage-two value when omitted
        stage, sweep: Labels for history rows
        include_travel_times: Put travel times into the short leading batches

    Returns:
        InversionState: The same state after the last batch
    """
    if fwi.n_frequencies != schedule.n_frequencies:
        raise InvalidArgumentError(
            f"Schedule lists {schedule.n_frequencies} frequencies, misfit has {fwi.n_frequencies}")
    if include_travel_times and eik is None:
        raise InvalidArgumentError("Travel-time batches need a travel-time misfit")
    bank = bank or RegularizerBank(fwi.core_grid)
    alpha = schedule.alpha(sweep) if alpha is None else alpha
    beta = schedule.beta_stage_two if beta is None else beta
    regularizer = bank.get(kind, alpha)

    for batch in frequency_batches(schedule.n_frequencies, schedule.batch_size, include_travel_times):
        objective = JointObjective(
            fwi=fwi,
            freq_indices=batch.indices,
            eik=eik if batch.include_travel_times else None,
            beta=beta if batch.include_travel_times else 0.0,
            regularizer=regularizer,
        )
        settings = GnSettings(max_iterations=schedule.gn_per_batch, pcg_iterations=schedule.pcg_iterations,
                              stage=stage, sweep=sweep, freq_batch=batch.label)
        projected_gauss_newton(state, objective, settings)
        _record_stage(state, fwi, eik, stage, sweep, batch.label)
    return state


def stage_one_batches(f_low: int, with_waveforms: bool = True) -> List[FrequencyBatch]:
    """Travel times with frequencies 0..f-1 for f = 1..f_low, or travel times alone"""
    if not with_waveforms:
        return [FrequencyBatch((), include_travel_times=True)]
    return [FrequencyBatch(tuple(range(f)), include_travel_times=True) for f in range(1, f_low + 1)]


def _stage_one(state: InversionState, schedule: ContinuationSchedule, fwi: FwiMisfit,
               eik: EikonalMisfit, bank: RegularizerBank, stage: str, with_waveforms: bool = True) -> InversionState:
    regularizer = bank.get("R1_biharmonic", schedule.alpha_start)
    for batch in stage_one_batches(schedule.f_low, with_waveforms):
        objective = JointObjective(
            fwi=fwi,
            freq_indices=batch.indices,
            eik=eik,
            beta=schedule.beta_stage_one,
            regularizer=regularizer,
        )
        settings = GnSettings(max_iterations=schedule.gn_stage_one, pcg_iterations=schedule.pcg_iterations,
                              stage=stage, sweep=0, freq_batch=batch.label)
        projected_gauss_newton(state, objective, settings)
        _record_stage(state, fwi, eik, stage, 0, batch.label)
    return state


def two_stage_joint_inversion(state: InversionState,
                              schedule: ContinuationSchedule,
                              fwi: FwiMisfit,
                              eik: Optional[EikonalMisfit],
                              m_ref: Optional[np.ndarray] = None) -> InversionState:
    """
    Joint travel-time and waveform inversion in two stages

    Stage I fits travel times with the lowest frequency, then the two lowest,
    up to the f_low lowest, each solve warm-started from the previous one under
    the second-order smoothness penalty with the stage-one beta. Stage II runs the
    configured sweeps of frequency continuation under the first-order penalty,
    alpha divided by alpha_decay per sweep, travel times joining the leading
    batches of every sweep with the stage-two beta.
    """
    if eik is None or eik.data is None:
        raise InvalidArgumentError("Joint inversion needs travel-time data")
    bank = RegularizerBank(fwi.core_grid, m_ref)
    logger.info(f"Stage I: travel times with the 1..{schedule.f_low} lowest frequencies, "
                f"{schedule.gn_stage_one} GN iterations per set")
    _stage_one(state, schedule, fwi, eik, bank, "I")
    for sweep in range(1, schedule.sweeps + 1):
        logger.info(f"Stage II sweep {sweep}/{schedule.sweeps}, alpha={schedule.alpha(sweep):g}")
        frequency_continuation(state, schedule, fwi, eik, bank, "R2_gradient", schedule.alpha(sweep),
                               schedule.beta_stage_two, "II", sweep, include_travel_times=True)
    return state


def tomo_then_fwi(state: InversionState,
                  schedule: ContinuationSchedule,
                  fwi: FwiMisfit,
                  eik: Optional[EikonalMisfit],
                  m_ref: Optional[np.ndarray] = None) -> InversionState:
    """Travel-time tomography with the stage-one settings, then waveform-only sweeps"""
    if eik is None or eik.data is None:
        raise InvalidArgumentError("Tomography needs travel-time data")
    bank = RegularizerBank(fwi.core_grid, m_ref)
    _stage_one(state, schedule, fwi, eik, bank, "tomo", with_waveforms=False)
    for sweep in range(1, schedule.sweeps + 1):
        frequency_continuation(state, schedule, fwi, None, bank, "R2_gradient", schedule.alpha(sweep),
                               0.0, "fwi", sweep)
    return state


def fwi_only(state: InversionState,
             schedule: ContinuationSchedule,
             fwi: FwiMisfit,
             eik: Optional[EikonalMisfit] = None,
             m_ref: Optional[np.ndarray] = None) -> InversionState:
    """Waveform-only sweeps; eik, when given, is only used for the recorded stage misfits"""
    bank = RegularizerBank(fwi.core_grid, m_ref)
    for sweep in range(1, schedule.sweeps + 1):
        frequency_continuation(state, schedule, fwi, eik, bank, "R2_gradient", schedule.alpha(sweep),
                               0.0, "fwi", sweep)
    return state


def run_pipeline(mode: str, state: InversionState, schedule: ContinuationSchedule, fwi: FwiMisfit,
                 eik: Optional[EikonalMisfit], m_ref: Optional[np.ndarray] = None) -> InversionState:
    pipelines = {
        "fwi_only": fwi_only,
        "tomo_then_fwi": tomo_then_fwi,
        "joint_two_stage": two_stage_joint_inversion,
    }
    if mode not in pipelines:
        raise InvalidArgumentError(f"Unknown inversion mode '{mode}', expected one of {PIPELINES}")
    return pipelines[mode](state, schedule, fwi, eik, m_ref)

