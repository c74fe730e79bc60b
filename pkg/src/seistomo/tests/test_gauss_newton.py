from types import SimpleNamespace

import numpy as np
import pytest

from ..modules.constants import HISTORY_COLUMNS
from ..modules.errors import InvalidArgumentError
from ..modules.gauss_newton import (
    FLAG_CONVERGED,
    FLAG_STAGNATION,
    GnSettings,
    InversionState,
    projected_gauss_newton,
)


class Quadratic:
    """f(m) = 1/2 (m - c)^T diag(a) (m - c)"""

    def __init__(self, a, c, flip_gradient=False):
        self.a = np.asarray(a, dtype=float)
        self.c = np.asarray(c, dtype=float)
        self.sign = -1.0 if flip_gradient else 1.0

    def value(self, m):
        r = m - self.c
        return 0.5 * float(r @ (self.a * r))

    def evaluate(self, m):
        return SimpleNamespace(total=self.value(m), gradient=self.sign * self.a * (m - self.c))

    def hessian_vec(self, m, v):
        return self.a * v

    def precondition(self, v):
        return np.asarray(v, dtype=float).copy()


A = [1.0, 2.0, 3.0, 4.0]


def test_unconstrained_quadratic_in_one_step():
    state = InversionState(m=np.zeros(4), lower=-10.0, upper=10.0)
    objective = Quadratic(A, [0.5, -0.2, 0.3, 0.1])
    projected_gauss_newton(state, objective, GnSettings(max_iterations=1, pcg_iterations=4, pcg_tol=1e-12))
    np.testing.assert_allclose(state.m, objective.c, atol=1e-10)
    assert state.iteration == 1
    row = state.history[0]
    assert list(row) == HISTORY_COLUMNS
    assert row["step_length"] == 1.0
    assert row["phi_total"] == pytest.approx(0.0, abs=1e-18)


def test_bounds_are_respected():
    state = InversionState(m=np.zeros(4), lower=-1.0, upper=1.0)
    objective = Quadratic(A, [0.5, 2.0, -3.0, 0.2])
    projected_gauss_newton(state, objective, GnSettings(max_iterations=5, pcg_iterations=4, pcg_tol=1e-12))
    np.testing.assert_allclose(state.m, [0.5, 1.0, -1.0, 0.2], atol=1e-10)
    assert FLAG_CONVERGED in state.flags
    assert state.history[-1]["active_count"] == 0
    assert state.iteration == 1


def test_objective_decreases_monotonically():
    rng = np.random.default_rng(12)
    a = rng.uniform(1.0, 100.0, 20)
    state = InversionState(m=np.zeros(20), lower=-0.5, upper=0.5)
    objective = Quadratic(a, rng.standard_normal(20))
    projected_gauss_newton(state, objective, GnSettings(max_iterations=6, pcg_iterations=2))
    values = [row["phi_total"] for row in state.history]
    assert all(b <= a for a, b in zip(values, values[1:]))
    assert np.all(np.abs(state.m) <= 0.5)


def test_zero_iterations_leave_the_model():
    state = InversionState(m=np.ones(4), lower=0.0, upper=2.0)
    projected_gauss_newton(state, Quadratic(A, np.zeros(4)), GnSettings(max_iterations=0))
    np.testing.assert_array_equal(state.m, np.ones(4))
    assert state.history == []


def test_failed_line_search_flags_stagnation():
    state = InversionState(m=np.zeros(4), lower=-10.0, upper=10.0)
    objective = Quadratic(A, np.ones(4), flip_gradient=True)
    projected_gauss_newton(state, objective, GnSettings(max_iterations=3, max_backtracks=4))
    assert state.flags == [FLAG_STAGNATION]
    np.testing.assert_array_equal(state.m, np.zeros(4))
    assert [row["step_length"] for row in state.history] == [0.0]


def test_callback_sees_every_iteration():
    seen = []
    state = InversionState(m=np.zeros(20), lower=-5.0, upper=5.0,
                           on_iteration=lambda s: seen.append((s.iteration, s.m.copy())))
    objective = Quadratic(np.linspace(1.0, 50.0, 20), np.linspace(-1.0, 1.0, 20))
    projected_gauss_newton(state, objective, GnSettings(max_iterations=3, pcg_iterations=1))
    assert [i for i, _ in seen] == [1, 2, 3]
    np.testing.assert_array_equal(seen[-1][1], state.m)


def test_history_rows_carry_labels():
    state = InversionState(m=np.zeros(4), lower=-10.0, upper=10.0)
    settings = GnSettings(max_iterations=1, stage="II", sweep=2, freq_batch="tt+0+1")
    projected_gauss_newton(state, Quadratic(A, np.ones(4)), settings)
    row = state.history[0]
    assert (row["stage"], row["sweep"], row["freq_batch"]) == ("II", 2, "tt+0+1")


class TestInversionState:
    def test_projects_infeasible_start(self):
        state = InversionState(m=np.array([-1.0, 0.5, 3.0]), lower=0.0, upper=1.0)
        np.testing.assert_array_equal(state.m, [0.0, 0.5, 1.0])

    def test_rejects_crossed_bounds(self):
        with pytest.raises(InvalidArgumentError):
            InversionState(m=np.zeros(2), lower=1.0, upper=0.0)

    def test_active_set(self):
        state = InversionState(m=np.array([0.0, 0.0, 1.0, 1.0, 0.5]), lower=0.0, upper=1.0)
        gradient = np.array([1.0, 0.0, -1.0, 1.0, 1.0])
        np.testing.assert_array_equal(state.active_set(gradient), [True, False, True, False, False])


@pytest.mark.parametrize("kwargs", [
    {"max_iterations": -1},
    {"pcg_iterations": 0},
    {"backtrack": 1.0},
    {"max_backtracks": 0},
])
def test_settings_validation(kwargs):
    with pytest.raises(InvalidArgumentError):
        GnSettings(**kwargs)
