"""
Misfits Module

Weighted least-squares data misfits for frequency-domain waveforms and
first-arrival travel times, their gradients and Gauss-Newton Hessian
products, and the joint objective

    phi(m) = phi_fwi(m) + beta * phi_eik(m) + alpha * R(m)

Models are flattened core-grid vectors (first axis fastest). Helmholtz
fields live on the padded grid; travel times on the core grid.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .cache_layer import FieldCache, LRUCache, model_key
from .constants import BASE_ATTENUATION, WEIGHT_NOISE_FLOOR
from .eikonal_fm import (
    FactoredEikonalSolution,
    SensitivityRecord,
    eik_jacobian_transpose_vec,
    eik_jacobian_vec,
    fm_solve,
    travel_time,
)
from .errors import ConvergenceError, InvalidArgumentError, StateError
from .helmholtz import (
    AttenuationField,
    HelmholtzSolver,
    RickerSource,
    SolverSettings,
    assemble_attenuation,
    build_helmholtz_problem,
    jacobian_block,
    jacobian_transpose_block,
)
from .mesh_model import (
    AcquisitionGeometry,
    PaddedModel,
    SlownessSquaredModel,
    build_sampling_operator,
    pad_model,
    padded_grid,
    point_source,
    sample,
    sample_adjoint,
)
from .regularizers import Regularizer

logger = logging.getLogger(__name__)


def data_weights(data: np.ndarray, noise_fraction: float, axis: int = -1) -> np.ndarray:
    """1 / (eta * max|d|)^2 along the receiver axis, eta floored to keep noiseless weights finite"""
    eta = max(float(noise_fraction), WEIGHT_NOISE_FLOOR)
    data = np.asarray(data)
    peak = np.where(np.isfinite(data), np.abs(data), 0.0).max(axis=axis)
    return np.where(peak > 0, 1.0 / (eta * np.where(peak > 0, peak, 1.0)) ** 2, 1.0)


@dataclass
class ObservedData:
    """Recorded data, NaN at inactive receivers, with per-trace scalar weights"""
    fwi: Optional[np.ndarray] = field(default=None, repr=False)            # (ns, nf, nr) complex
    travel_times: Optional[np.ndarray] = field(default=None, repr=False)   # (ns, nr)
    fwi_weights: Optional[np.ndarray] = field(default=None, repr=False)    # (ns, nf)
    eik_weights: Optional[np.ndarray] = field(default=None, repr=False)    # (ns,)
    masks: Optional[np.ndarray] = field(default=None, repr=False)          # (ns, nr)

    def __post_init__(self):
        if self.fwi is None and self.travel_times is None:
            raise InvalidArgumentError("Observed data needs waveforms, travel times or both")
        if self.fwi is not None:
            self.fwi = np.asarray(self.fwi, dtype=np.complex128)
            if self.fwi.ndim != 3:
                raise InvalidArgumentError("Waveform data must have shape (sources, frequencies, receivers)")
            ns, nf, nr = self.fwi.shape
            if self.fwi_weights is None:
                self.fwi_weights = np.ones((ns, nf))
            self.fwi_weights = np.asarray(self.fwi_weights, dtype=np.float64)
            if self.fwi_weights.shape != (ns, nf):
                raise InvalidArgumentError(f"Waveform weights must have shape {(ns, nf)}")
        if self.travel_times is not None:
            self.travel_times = np.asarray(self.travel_times, dtype=np.float64)
            if self.travel_times.ndim != 2:
                raise InvalidArgumentError("Travel-time data must have shape (sources, receivers)")
            if self.fwi is not None and self.travel_times.shape != (self.fwi.shape[0], self.fwi.shape[2]):
                raise InvalidArgumentError("Travel-time and waveform data disagree on sources or receivers")
            if self.eik_weights is None:
                self.eik_weights = np.ones(self.travel_times.shape[0])
            self.eik_weights = np.asarray(self.eik_weights, dtype=np.float64)
            if self.eik_weights.shape != (self.travel_times.shape[0],):
                raise InvalidArgumentError("Travel-time weights need one entry per source")

        for name, w in (("waveform", self.fwi_weights), ("travel-time", self.eik_weights)):
            if w is not None and not np.all(w > 0):
                raise InvalidArgumentError(f"All {name} weights must be positive")

        finite = self._finite_mask()
        if self.masks is None:
            self.masks = finite
        self.masks = np.asarray(self.masks, dtype=bool) & finite

    def _finite_mask(self) -> np.ndarray:
        masks = []
        if self.fwi is not None:
            masks.append(np.all(np.isfinite(self.fwi), axis=1))
        if self.travel_times is not None:
            masks.append(np.isfinite(self.travel_times))
        return np.logical_and.reduce(masks) if len(masks) > 1 else masks[0]

    @property
    def n_sources(self) -> int:
        return self.masks.shape[0]

    @property
    def n_receivers(self) -> int:
        return self.masks.shape[1]

    @property
    def n_frequencies(self) -> int:
        return 0 if self.fwi is None else self.fwi.shape[1]

    @classmethod
    def from_arrays(cls, fwi: Optional[np.ndarray], travel_times: Optional[np.ndarray],
                    noise_fraction: float, masks: Optional[np.ndarray] = None) -> "ObservedData":
        """Data with default weights 1 / (eta * max|d|)^2 per source(-frequency)"""
        fwi_w = None if fwi is None else data_weights(np.asarray(fwi), noise_fraction, axis=2)
        eik_w = None if travel_times is None else data_weights(np.asarray(travel_times), noise_fraction, axis=1)
        return cls(fwi=fwi, travel_times=travel_times, fwi_weights=fwi_w, eik_weights=eik_w, masks=masks)

    def scaled_weights(self, factor: float) -> "ObservedData":
        return ObservedData(
            fwi=self.fwi, travel_times=self.travel_times,
            fwi_weights=None if self.fwi_weights is None else self.fwi_weights * factor,
            eik_weights=None if self.eik_weights is None else self.eik_weights * factor,
            masks=self.masks,
        )

    def check_geometry(self, geometry: AcquisitionGeometry) -> None:
        expected = (geometry.n_sources, geometry.n_receivers)
        if self.masks.shape != expected:
            raise InvalidArgumentError(f"Data for {self.masks.shape} (sources, receivers) but geometry has {expected}")
        if np.any(self.masks & ~geometry.active_mask):
            raise InvalidArgumentError("Data present at receivers outside the offset window")


@dataclass
class FwiSetup:
    """Everything the waveform misfit needs besides the model"""
    geometry: AcquisitionGeometry
    frequencies_hz: Sequence[float]
    pad: Tuple[Tuple[int, int], ...]
    layer_width: int
    base_attenuation: float = BASE_ATTENUATION
    absorbing_strength: float = 1.0
    free_surface: bool = True
    wavelet: Optional[RickerSource] = None
    solver: SolverSettings = field(default_factory=SolverSettings)
    check_ppw: bool = True
    threads: int = 1
    field_cache: Optional[FieldCache] = None

    def __post_init__(self):
        freqs = [float(f) for f in self.frequencies_hz]
        if not freqs or any(f <= 0 for f in freqs):
            raise InvalidArgumentError("Frequencies must be positive")
        if any(b <= a for a, b in zip(freqs, freqs[1:])):
            raise InvalidArgumentError(f"Frequencies must be strictly increasing, got {freqs}")
        if self.threads < 1:
            raise InvalidArgumentError("threads must be at least 1")
        self.frequencies_hz = freqs

    @property
    def omegas(self) -> List[float]:
        return [2.0 * math.pi * f for f in self.frequencies_hz]


class FwiMisfit:
    """
    phi_fwi(m) = sum_j sum_i w_ij ||P^T u_ij(m) - d_ij||^2

    Solvers are memoized per (model, frequency) and fields go through a
    FieldCache, so a gradient followed by Hessian products at the same model
    reuses one hierarchy and one set of forward fields.
    """

    def __init__(self, setup: FwiSetup, data: Optional[ObservedData] = None):
        self.setup = setup
        self.data = data
        geometry = setup.geometry
        self.core_grid = geometry.grid
        self.grid = padded_grid(self.core_grid, setup.pad)
        self.sampling = build_sampling_operator(self.grid, geometry.receivers)
        self.attenuation: AttenuationField = assemble_attenuation(
            self.grid, setup.base_attenuation, setup.layer_width, setup.free_surface, setup.absorbing_strength)

        if data is not None:
            if data.fwi is None:
                raise InvalidArgumentError("Observed data carries no waveforms")
            data.check_geometry(geometry)
            if data.n_frequencies != len(setup.frequencies_hz):
                raise InvalidArgumentError(
                    f"Data has {data.n_frequencies} frequencies, setup lists {len(setup.frequencies_hz)}")
            self.masks = data.masks
        else:
            self.masks = geometry.active_mask

        self._sources = self._source_block()
        self._solvers = LRUCache[Tuple[HelmholtzSolver, PaddedModel]](max_size=2 * len(setup.frequencies_hz))
        self.fields = setup.field_cache or FieldCache(memory_cache_size=2 * len(setup.frequencies_hz))

    @property
    def n_frequencies(self) -> int:
        return len(self.setup.frequencies_hz)

    def _source_block(self) -> np.ndarray:
        """Unit point sources, one column per shot"""
        geometry = self.setup.geometry
        Q = np.zeros((self.grid.size, geometry.n_sources), dtype=np.complex128)
        for i, x in enumerate(geometry.sources):
            Q[:, i] = point_source(self.grid, x)
        return Q

    def _wavelet(self, omega: float) -> complex:
        return 1.0 if self.setup.wavelet is None else float(self.setup.wavelet.spectrum(omega))

    def check_indices(self, freq_indices: Optional[Sequence[int]]) -> List[int]:
        if freq_indices is None:
            return list(range(self.n_frequencies))
        indices = [int(j) for j in freq_indices]
        for j in indices:
            if not 0 <= j < self.n_frequencies:
                raise InvalidArgumentError(f"Frequency index {j} out of range for {self.n_frequencies} frequencies")
        return indices

    def padded(self, m: np.ndarray) -> PaddedModel:
        return pad_model(SlownessSquaredModel(self.core_grid, np.asarray(m, dtype=np.float64)), self.setup.pad)

    def solver(self, m: np.ndarray, j: int) -> Tuple[HelmholtzSolver, PaddedModel]:
        key = model_key(m, j, self.setup.solver)
        cached = self._solvers.get(key)
        if cached is not None:
            return cached
        padded = self.padded(m)
        problem = build_helmholtz_problem(padded.padded, self.setup.omegas[j], self.attenuation, self.setup.check_ppw)
        solver = HelmholtzSolver(problem, self.setup.solver)
        self._solvers.set(key, (solver, padded))
        return solver, padded

    def wavefields(self, m: np.ndarray, j: int) -> np.ndarray:
        """Fields (padded nodes, sources) at frequency index j"""
        key = model_key(m, "fields", j, self.setup.solver)
        U = self.fields.get_fields(key)
        if U is not None:
            return U
        solver, _ = self.solver(m, j)
        Q = self._sources * self._wavelet(solver.problem.omega)
        try:
            U, report = solver.solve(Q)
        except ConvergenceError as e:
            freq = self.setup.frequencies_hz[j]
            raise ConvergenceError(
                f"Forward solve failed at frequency {j} ({freq:g} Hz) for sources 0..{Q.shape[1] - 1}: {e}",
                e.residual_history,
            ) from e
        logger.debug(f"Frequency {j}: {report.cycles} cycles for {Q.shape[1]} sources")
        U = U.reshape(Q.shape)
        self.fields.set_fields(key, U)
        return U

    def _map(self, fn, items):
        items = list(items)
        if self.setup.threads == 1 or len(items) <= 1:
            return [fn(item) for item in items]
        with ThreadPoolExecutor(max_workers=self.setup.threads) as executor:
            return list(executor.map(fn, items))

    def predict(self, m: np.ndarray, freq_indices: Optional[Sequence[int]] = None) -> np.ndarray:
        """Simulated receiver data (sources, selected frequencies, receivers)"""
        indices = self.check_indices(freq_indices)
        blocks = self._map(lambda j: sample(self.sampling, self.wavefields(m, j)).T, indices)
        return np.stack(blocks, axis=1)

    def _residual(self, m: np.ndarray, j: int) -> Tuple[np.ndarray, np.ndarray]:
        """Masked residual (receivers, sources) and weights (sources,)"""
        if self.data is None:
            raise StateError("Misfit evaluation needs observed data")
        D = sample(self.sampling, self.wavefields(m, j))
        observed = np.nan_to_num(self.data.fwi[:, j, :].T)
        R = np.where(self.masks.T, D - observed, 0.0)
        return R, self.data.fwi_weights[:, j]

    def _term(self, m: np.ndarray, j: int, with_gradient: bool) -> Tuple[float, Optional[np.ndarray]]:
        R, w = self._residual(m, j)
        value = float(np.sum(w * np.sum(np.abs(R) ** 2, axis=0)))
        if not with_gradient:
            return value, None
        solver, padded = self.solver(m, j)
        U = self.wavefields(m, j)
        g = 2.0 * jacobian_transpose_block(solver, U, R * w[None, :], self.sampling, padded, self.masks)
        return value, g

    def value(self, m: np.ndarray, freq_indices: Optional[Sequence[int]] = None) -> float:
        indices = self.check_indices(freq_indices)
        terms = self._map(lambda j: self._term(m, j, False), indices)
        return float(sum(v for v, _ in terms))

    def misfit_and_gradient(self, m: np.ndarray,
                            freq_indices: Optional[Sequence[int]] = None) -> Tuple[float, np.ndarray]:
        indices = self.check_indices(freq_indices)
        terms = self._map(lambda j: self._term(m, j, True), indices)
        gradient = np.zeros(self.core_grid.size)
        for _, g in terms:
            gradient += g
        return float(sum(v for v, _ in terms)), gradient

    def hessian_vec(self, m: np.ndarray, v: np.ndarray, freq_indices: Optional[Sequence[int]] = None) -> np.ndarray:
        """2 sum_j J_j^T W_j J_j v with the fields stored for m"""
        if self.data is None:
            raise StateError("Hessian products need observed data for the weights")
        indices = self.check_indices(freq_indices)
        v = np.asarray(v, dtype=np.float64)

        def term(j: int) -> np.ndarray:
            solver, padded = self.solver(m, j)
            U = self.wavefields(m, j)
            JV = jacobian_block(solver, U, v, self.sampling, padded, self.masks)
            w = self.data.fwi_weights[:, j]
            return 2.0 * jacobian_transpose_block(solver, U, JV * w[None, :], self.sampling, padded, self.masks)

        out = np.zeros(self.core_grid.size)
        if not np.any(v):
            return out
        for t in self._map(term, indices):
            out += t
        return out


class EikonalMisfit:
    """phi_eik(m) = sum_i w_i ||P^T tau_i(m) - d_i||^2 on the core grid"""

    def __init__(self, geometry: AcquisitionGeometry, data: Optional[ObservedData] = None, threads: int = 1):
        if threads < 1:
            raise InvalidArgumentError("threads must be at least 1")
        self.geometry = geometry
        self.data = data
        self.threads = threads
        self.grid = geometry.grid
        self.sampling = build_sampling_operator(self.grid, geometry.receivers)
        if data is not None:
            if data.travel_times is None:
                raise InvalidArgumentError("Observed data carries no travel times")
            data.check_geometry(geometry)
            self.masks = data.masks
        else:
            self.masks = geometry.active_mask
        self._key: Optional[str] = None
        self._solutions: List[Tuple[FactoredEikonalSolution, SensitivityRecord]] = []

    def solutions(self, m: np.ndarray) -> List[Tuple[FactoredEikonalSolution, SensitivityRecord]]:
        """Fast Marching results for every source, recomputed only when m changes"""
        key = model_key(m)
        if key == self._key:
            return self._solutions
        model = SlownessSquaredModel(self.grid, np.asarray(m, dtype=np.float64))
        sources = list(self.geometry.sources)
        if self.threads == 1:
            results = [fm_solve(model, x) for x in sources]
        else:
            with ThreadPoolExecutor(max_workers=self.threads) as executor:
                results = list(executor.map(lambda x: fm_solve(model, x), sources))
        self._key, self._solutions = key, results
        return results

    def predict(self, m: np.ndarray) -> np.ndarray:
        """Travel times (sources, receivers) at the receiver positions"""
        rows = [sample(self.sampling, self.grid.flatten(travel_time(sol))) for sol, _ in self.solutions(m)]
        return np.array(rows)

    def _residuals(self, m: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        if self.data is None:
            raise StateError("Misfit evaluation needs observed data")
        predicted = self.predict(m)
        residual = np.where(self.masks, predicted - np.nan_to_num(self.data.travel_times), 0.0)
        return residual, self.data.eik_weights

    def value(self, m: np.ndarray) -> float:
        residual, w = self._residuals(m)
        return float(np.sum(w * np.sum(residual**2, axis=1)))

    def misfit_and_gradient(self, m: np.ndarray) -> Tuple[float, np.ndarray]:
        residual, w = self._residuals(m)
        records = [rec for _, rec in self.solutions(m)]
        gradient = np.zeros(self.grid.size)
        for i, rec in enumerate(records):
            if not np.any(residual[i]):
                continue
            y = sample_adjoint(self.sampling, w[i] * residual[i], self.masks[i])
            gradient += 2.0 * eik_jacobian_transpose_vec(rec, y)
        return float(np.sum(w * np.sum(residual**2, axis=1))), gradient

    def jacobian_vec(self, m: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Travel-time data perturbation (sources, receivers)"""
        rows = [sample(self.sampling, eik_jacobian_vec(rec, v), self.masks[i])
                for i, (_, rec) in enumerate(self.solutions(m))]
        return np.array(rows)

    def hessian_vec(self, m: np.ndarray, v: np.ndarray) -> np.ndarray:
        if self.data is None:
            raise StateError("Hessian products need observed data for the weights")
        out = np.zeros(self.grid.size)
        if not np.any(v):
            return out
        w = self.data.eik_weights
        for i, (_, rec) in enumerate(self.solutions(m)):
            jv = sample(self.sampling, eik_jacobian_vec(rec, v), self.masks[i])
            out += 2.0 * eik_jacobian_transpose_vec(rec, sample_adjoint(self.sampling, w[i] * jv, self.masks[i]))
        return out


@dataclass
class ObjectiveValue:
    total: float
    gradient: np.ndarray = field(repr=False)
    components: Dict[str, float] = field(default_factory=dict)


class JointObjective:
    """
    Joint objective on a frequency subset; any term may be absent

    Components reported: phi_fwi and phi_eik unweighted, phi_reg = alpha R(m).
    """

    def __init__(self,
                 fwi: Optional[FwiMisfit] = None,
                 freq_indices: Optional[Sequence[int]] = None,
                 eik: Optional[EikonalMisfit] = None,
                 beta: float = 0.0,
                 regularizer: Optional[Regularizer] = None):
        if beta < 0:
            raise InvalidArgumentError("beta must be nonnegative")
        if fwi is None and eik is None and regularizer is None:
            raise InvalidArgumentError("Objective has no terms")
        self.fwi = fwi
        self.freq_indices = [] if fwi is None else list(fwi.check_indices(freq_indices))
        self.eik = eik if beta > 0 else None
        self.beta = float(beta)
        self.regularizer = regularizer

    @property
    def alpha(self) -> float:
        return 0.0 if self.regularizer is None else self.regularizer.alpha

    @property
    def uses_fwi(self) -> bool:
        return self.fwi is not None and len(self.freq_indices) > 0

    def components(self, m: np.ndarray) -> Dict[str, float]:
        phi_fwi = self.fwi.value(m, self.freq_indices) if self.uses_fwi else 0.0
        phi_eik = self.eik.value(m) if self.eik is not None else 0.0
        phi_reg = self.alpha * self.regularizer.value(m) if self.regularizer is not None else 0.0
        return {
            "phi_fwi": phi_fwi,
            "phi_eik": phi_eik,
            "phi_reg": phi_reg,
            "phi_total": phi_fwi + self.beta * phi_eik + phi_reg,
        }

    def value(self, m: np.ndarray) -> float:
        return self.components(m)["phi_total"]

    def evaluate(self, m: np.ndarray) -> ObjectiveValue:
        m = np.asarray(m, dtype=np.float64)
        gradient = np.zeros(m.size)
        phi_fwi = phi_eik = phi_reg = 0.0
        if self.uses_fwi:
            phi_fwi, g = self.fwi.misfit_and_gradient(m, self.freq_indices)
            gradient += g
        if self.eik is not None:
            phi_eik, g = self.eik.misfit_and_gradient(m)
            gradient += self.beta * g
        if self.regularizer is not None and self.alpha > 0:
            phi_reg = self.alpha * self.regularizer.value(m)
            gradient += self.alpha * self.regularizer.gradient(m)
        total = phi_fwi + self.beta * phi_eik + phi_reg
        return ObjectiveValue(total, gradient, {
            "phi_fwi": phi_fwi, "phi_eik": phi_eik, "phi_reg": phi_reg, "phi_total": total,
        })

    def hessian_vec(self, m: np.ndarray, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64)
        out = np.zeros(v.size)
        if not np.any(v):
            return out
        if self.uses_fwi:
            out += self.fwi.hessian_vec(m, v, self.freq_indices)
        if self.eik is not None:
            out += self.beta * self.eik.hessian_vec(m, v)
        if self.regularizer is not None and self.alpha > 0:
            out += self.alpha * self.regularizer.hessian_vec(v)
        return out

    def precondition(self, v: np.ndarray) -> np.ndarray:
        if self.regularizer is None or self.alpha <= 0:
            return np.asarray(v, dtype=np.float64).copy()
        return self.regularizer.preconditioner()(v)


def fwi_misfit_and_gradient(fwi: FwiMisfit, m: np.ndarray,
                            freq_indices: Optional[Sequence[int]] = None) -> Tuple[float, np.ndarray]:
    """Waveform misfit over a frequency subset and its gradient"""
    return fwi.misfit_and_gradient(m, freq_indices)


def eik_misfit_and_gradient(eik: EikonalMisfit, m: np.ndarray) -> Tuple[float, np.ndarray]:
    return eik.misfit_and_gradient(m)


def joint_objective(m: np.ndarray,
                    fwi: Optional[FwiMisfit],
                    eik: Optional[EikonalMisfit],
                    beta: float,
                    regularizer: Optional[Regularizer] = None,
                    freq_indices: Optional[Sequence[int]] = None) -> Tuple[float, np.ndarray]:
    """
    Joint value and gradient

    Args:
        m: Core model vector
        fwi: Waveform misfit, or None
        eik: Travel-time misfit, or None
        beta: Travel-time weight
        regularizer: Penalty carrying its own alpha
        freq_indices: Frequency subset of the waveform term

    Returns:
        Tuple of phi_fwi + beta phi_eik + alpha R and its gradient
    """
    result = JointObjective(fwi, freq_indices, eik, beta, regularizer).evaluate(m)
    return result.total, result.gradient


def gn_hessian_vec(objective: JointObjective, m: np.ndarray, v: np.ndarray) -> np.ndarray:
    return objective.hessian_vec(m, v)
