import math

import numpy as np
import pytest

from ..modules.continuation import (
    ContinuationSchedule,
    RegularizerBank,
    frequency_batches,
    frequency_continuation,
    run_pipeline,
    stage_one_batches,
    two_stage_joint_inversion,
)
from ..modules.errors import InvalidArgumentError
from ..modules.gauss_newton import InversionState
from ..modules.helmholtz import SolverSettings
from ..modules.mesh_model import RegularGrid, velocity_bounds_to_model_bounds
from ..modules.misfits import EikonalMisfit, FwiMisfit, FwiSetup, ObservedData
from ..modules.synthetic import lens_velocity, top_surface_acquisition

FREQUENCIES = (2.0, 3.0, 4.0)


def _labels(batches):
    return [b.label for b in batches]


class TestFrequencyBatches:
    def test_sliding_windows(self):
        assert _labels(frequency_batches(5, 3)) == ["0", "0+1", "0+1+2", "1+2+3", "2+3+4"]

    def test_travel_times_fill_short_windows(self):
        assert _labels(frequency_batches(5, 3, True)) == ["tt+0", "tt+0+1", "0+1+2", "1+2+3", "2+3+4"]

    def test_single_frequency_batches_never_add_travel_times(self):
        assert _labels(frequency_batches(3, 1, True)) == ["0", "1", "2"]

    def test_every_frequency_ends_one_window(self):
        batches = frequency_batches(7, 2)
        assert [b.indices[-1] for b in batches] == list(range(7))
        assert all(len(b.indices) <= 2 for b in batches)


def test_stage_one_grows_the_frequency_set():
    assert _labels(stage_one_batches(3)) == ["tt+0", "tt+0+1", "tt+0+1+2"]
    assert _labels(stage_one_batches(1)) == ["tt+0"]
    assert _labels(stage_one_batches(3, with_waveforms=False)) == ["tt"]


class TestSchedule:
    def test_alpha_decays_per_sweep(self):
        schedule = ContinuationSchedule(FREQUENCIES, alpha_start=1e4, alpha_decay=10.0)
        assert [schedule.alpha(s) for s in (1, 2, 3)] == pytest.approx([1e4, 1e3, 1e2])

    @pytest.mark.parametrize("kwargs", [
        {"frequencies_hz": ()},
        {"frequencies_hz": (3.0, 2.0)},
        {"f_low": 0},
        {"f_low": 4},
        {"batch_size": 4},
        {"sweeps": 0},
        {"gn_per_batch": -1},
        {"beta_stage_one": -1.0},
        {"alpha_decay": 0.0},
    ])
    def test_validation(self, kwargs):
        with pytest.raises(InvalidArgumentError):
            ContinuationSchedule(**{"frequencies_hz": FREQUENCIES, **kwargs})


def test_regularizer_bank_reuses_instances():
    bank = RegularizerBank(RegularGrid((5, 5), (10.0, 10.0)))
    assert bank.get("R2_gradient", 1.0) is bank.get("R2_gradient", 1.0)
    assert bank.get("R2_gradient", 1.0) is not bank.get("R2_gradient", 0.1)


@pytest.fixture(scope="module")
def problem():
    grid = RegularGrid((21, 11), (20.0, 20.0))
    geometry = top_surface_acquisition(grid, 3, 10, offset_min=0.0, offset_max=math.inf)
    setup = FwiSetup(geometry=geometry, frequencies_hz=FREQUENCIES, pad=((6, 6), (0, 6)), layer_width=5,
                     solver=SolverSettings(method="dense_lu_small"))
    m_true = grid.flatten(1.0 / lens_velocity(grid, 2000.0, 0.1, -0.05) ** 2)
    data = ObservedData.from_arrays(FwiMisfit(setup).predict(m_true), EikonalMisfit(geometry).predict(m_true), 0.01)
    m_start = np.full(grid.size, 1.0 / 2000.0**2)
    return setup, geometry, data, m_start


def _state(m_start):
    lower, upper = velocity_bounds_to_model_bounds(1500.0, 2500.0)
    return InversionState(m=m_start, lower=lower, upper=upper)


def _schedule(**kwargs):
    defaults = dict(f_low=1, batch_size=2, sweeps=1, gn_stage_one=1, gn_per_batch=1, pcg_iterations=3,
                    alpha_start=1e-2)
    return ContinuationSchedule(FREQUENCIES, **{**defaults, **kwargs})


class TestPipelines:
    def test_fwi_only_reduces_the_waveform_misfit(self, problem):
        setup, geometry, data, m_start = problem
        fwi = FwiMisfit(setup, data)
        state = run_pipeline("fwi_only", _state(m_start), _schedule(), fwi, None)
        assert fwi.value(state.m) < fwi.value(m_start)
        assert [row["freq_batch"] for row in state.history] == ["0", "0+1", "1+2"]
        assert [row["stage"] for row in state.stage_misfits] == ["fwi"] * 3
        assert state.stage_misfits[0]["phi_eik_all"] == ""

    def test_joint_two_stage_labels(self, problem):
        setup, geometry, data, m_start = problem
        fwi = FwiMisfit(setup, data)
        eik = EikonalMisfit(geometry, data)
        state = run_pipeline("joint_two_stage", _state(m_start), _schedule(sweeps=2), fwi, eik, m_ref=m_start)
        rows = [(r["stage"], r["sweep"], r["freq_batch"]) for r in state.stage_misfits]
        assert rows == [
            ("I", 0, "tt+0"),
            ("II", 1, "tt+0"), ("II", 1, "0+1"), ("II", 1, "1+2"),
            ("II", 2, "tt+0"), ("II", 2, "0+1"), ("II", 2, "1+2"),
        ]
        assert all(isinstance(r["phi_eik_all"], float) for r in state.stage_misfits)
        assert eik.value(state.m) < eik.value(m_start)

    def test_tomography_stage_uses_travel_times_only(self, problem):
        setup, geometry, data, m_start = problem
        fwi = FwiMisfit(setup, data)
        eik = EikonalMisfit(geometry, data)
        state = run_pipeline("tomo_then_fwi", _state(m_start), _schedule(gn_per_batch=0), fwi, eik)
        assert state.stage_misfits[0]["freq_batch"] == "tt"
        assert state.history[0]["phi_fwi"] == 0.0
        assert len(state.history) == 1

    def test_joint_needs_travel_times(self, problem):
        setup, _, data, m_start = problem
        with pytest.raises(InvalidArgumentError):
            run_pipeline("joint_two_stage", _state(m_start), _schedule(), FwiMisfit(setup, data), None)

    def test_unknown_mode(self, problem):
        setup, _, data, m_start = problem
        with pytest.raises(InvalidArgumentError):
            run_pipeline("fwi_first", _state(m_start), _schedule(), FwiMisfit(setup, data), None)

    def test_schedule_must_match_the_misfit(self, problem):
        setup, _, data, m_start = problem
        schedule = ContinuationSchedule((2.0, 3.0))
        with pytest.raises(InvalidArgumentError):
            frequency_continuation(_state(m_start), schedule, FwiMisfit(setup, data))


def test_two_stage_needs_observed_travel_times(problem):
    setup, geometry, data, m_start = problem
    with pytest.raises(InvalidArgumentError):
        two_stage_joint_inversion(_state(m_start), _schedule(), FwiMisfit(setup, data), EikonalMisfit(geometry))


def test_two_stage_stage_one_uses_the_stage_one_beta(problem):
    setup, geometry, data, m_start = problem
    schedule = _schedule(gn_per_batch=0, beta_stage_one=7.0)
    eik = EikonalMisfit(geometry, data)
    state = two_stage_joint_inversion(_state(m_start), schedule, FwiMisfit(setup, data), eik)
    row = state.history[0]
    assert len(state.history) == 1
    assert float(row["phi_total"]) == pytest.approx(
        row["phi_fwi"] + 7.0 * row["phi_eik"] + row["phi_reg"], rel=1e-12)


def test_stage_one_solves_once_per_low_frequency(problem):
    setup, geometry, data, m_start = problem
    schedule = _schedule(f_low=2, gn_per_batch=0)
    eik = EikonalMisfit(geometry, data)
    state = two_stage_joint_inversion(_state(m_start), schedule, FwiMisfit(setup, data), eik)
    stage_one = [(r["stage"], r["sweep"], r["freq_batch"]) for r in state.stage_misfits if r["stage"] == "I"]
    assert stage_one == [("I", 0, "tt+0"), ("I", 0, "tt+0+1")]
    assert [row["freq_batch"] for row in state.history] == ["tt+0", "tt+0+1"]
