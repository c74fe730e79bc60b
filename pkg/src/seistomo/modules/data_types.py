import json
import math
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Type

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from thefuzz import process

from .constants import (
    ALPHA_DECAY,
    ALPHA_START,
    BASE_ATTENUATION,
    BATCH_SIZE,
    BENCH_ATTENUATION,
    BETA_STAGE_ONE,
    BETA_STAGE_TWO,
    DEFAULT_FREQUENCIES_HZ,
    DEFAULT_JACOBI_WEIGHT,
    DEFAULT_MG_LEVELS,
    DEFAULT_NOISE_FRACTION,
    DEFAULT_OUTPUT_DIR,
    DEFAULT_POST_RELAX,
    DEFAULT_PRE_RELAX,
    DEFAULT_SHIFT_FACTOR,
    DEFAULT_SOLVER_MAXIT,
    DEFAULT_SOLVER_TOL,
    F_LOW,
    FGMRES_RESTART,
    GN_STAGE_ONE,
    GN_STAGE_TWO,
    OFFSET_MAX,
    OFFSET_MIN,
    PCG_ITERATIONS,
    RICKER_PEAK_HZ,
    SWEEPS,
    VELOCITY_BOUNDS,
)
from .errors import ConfigError, ParseError

INVERSION_MODES = ("fwi_only", "tomo_then_fwi", "joint_two_stage")
BENCH_METHODS = ("mg_bicgstab", "mg_fgmres_w", "mg_fgmres_k")


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


class GridSpec(StrictModel):
    n: List[int]
    h: List[float]
    origin: Optional[List[float]] = None

    @model_validator(mode="after")
    def _check(self) -> "GridSpec":
        if len(self.n) not in (2, 3) or len(self.h) != len(self.n):
            raise ValueError("grid needs 2 or 3 axes with one spacing per axis")
        if self.origin is not None and len(self.origin) != len(self.n):
            raise ValueError("grid origin needs one entry per axis")
        return self


class ModelSpec(StrictModel):
    generator: Literal["constant", "linear", "layered", "lens", "file"] = "linear"
    velocity: float = 2000.0
    v_top: float = 1500.0
    v_bottom: float = 3000.0
    velocities: List[float] = [1800.0, 2500.0, 3200.0]
    interfaces: Optional[List[float]] = None
    background: float = 2000.0
    contrast: float = 0.5
    sub_lens_contrast: float = -0.1
    path: Optional[Path] = None

    @model_validator(mode="after")
    def _check(self) -> "ModelSpec":
        if self.generator == "file" and self.path is None:
            raise ValueError("generator 'file' needs a path")
        return self


class AcquisitionSpec(StrictModel):
    n_sources: int = Field(8, ge=1)
    n_receivers: int = Field(32, ge=1)
    depth_index: int = Field(1, ge=0)
    offset_min: float = Field(OFFSET_MIN, ge=0)
    offset_max: float = OFFSET_MAX


class PaddingSpec(StrictModel):
    # (lo, hi) per axis; the low side of the depth axis is the free surface
    pad: List[int] = [10, 10, 0, 10]
    layer_width: int = Field(12, ge=0)
    absorbing_strength: float = Field(1.0, ge=0)
    free_surface: bool = True


class ScheduleSpec(StrictModel):
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
    velocity_bounds: List[float] = list(VELOCITY_BOUNDS)

    @model_validator(mode="after")
    def _check(self) -> "ScheduleSpec":
        if len(self.velocity_bounds) != 2 or not 0 < self.velocity_bounds[0] <= self.velocity_bounds[1]:
            raise ValueError("velocity_bounds must be [v_min, v_max] with 0 < v_min <= v_max")
        return self


class SolverSpec(StrictModel):
    method: Literal["mg_bicgstab", "mg_fgmres_w", "mg_fgmres_k", "dense_lu_small"] = "mg_bicgstab"
    tol: float = Field(DEFAULT_SOLVER_TOL, gt=0)
    maxit: int = Field(DEFAULT_SOLVER_MAXIT, ge=1)
    nlevels: int = Field(DEFAULT_MG_LEVELS, ge=1)
    shift_factor: float = Field(DEFAULT_SHIFT_FACTOR, ge=0)
    pre_relax: int = Field(DEFAULT_PRE_RELAX, ge=1)
    post_relax: int = Field(DEFAULT_POST_RELAX, ge=1)
    jacobi_weight: float = Field(DEFAULT_JACOBI_WEIGHT, gt=0, le=1)
    fgmres_restart: int = Field(FGMRES_RESTART, ge=1)
    field_cache_dir: Optional[Path] = None
    field_precision: Literal["f32", "f16"] = "f16"


class BenchmarkSpec(StrictModel):
    grids: List[List[int]] = [[129, 129]]
    h: float = Field(10.0, gt=0)
    v_min: float = Field(1500.0, gt=0)
    v_max: float = Field(4500.0, gt=0)
    # omega chosen so that omega * h / v_min = 2 pi / points_per_wavelength
    points_per_wavelength: float = Field(10.0, gt=0)
    block_sizes: List[int] = [1, 4, 16]
    methods: List[Literal["mg_bicgstab", "mg_fgmres_w", "mg_fgmres_k"]] = list(BENCH_METHODS)
    shift_factor: float = Field(DEFAULT_SHIFT_FACTOR, ge=0)
    attenuation: float = Field(BENCH_ATTENUATION, ge=0)
    layer_width: int = Field(0, ge=0)
    nlevels: int = Field(DEFAULT_MG_LEVELS, ge=1)
    tol: float = Field(DEFAULT_SOLVER_TOL, gt=0)
    maxit: int = Field(DEFAULT_SOLVER_MAXIT, ge=1)
    max_memory_gb: float = Field(8.0, gt=0)

    @model_validator(mode="after")
    def _check(self) -> "BenchmarkSpec":
        if any(len(g) not in (2, 3) for g in self.grids):
            raise ValueError("benchmark grids must be 2D or 3D node counts")
        if any(b < 1 for b in self.block_sizes):
            raise ValueError("block sizes must be positive")
        if self.v_max < self.v_min:
            raise ValueError("v_max must not be below v_min")
        return self

    def omega(self) -> float:
        return 2.0 * math.pi * self.v_min / (self.points_per_wavelength * self.h)


class RunConfig(StrictModel):
    experiment: str = "toy"
    grid: GridSpec = GridSpec(n=[128, 64], h=[20.0, 20.0])
    truth: ModelSpec = ModelSpec(generator="lens")
    start: ModelSpec = ModelSpec(generator="linear")
    acquisition: AcquisitionSpec = AcquisitionSpec()
    frequencies_hz: List[float] = list(DEFAULT_FREQUENCIES_HZ)
    base_attenuation: float = Field(BASE_ATTENUATION, ge=0)
    ricker_peak_hz: float = Field(RICKER_PEAK_HZ, gt=0)
    padding: PaddingSpec = PaddingSpec()
    noise_fraction: float = Field(DEFAULT_NOISE_FRACTION, ge=0)
    schedule: ScheduleSpec = ScheduleSpec()
    solver: SolverSpec = SolverSpec()
    bench: BenchmarkSpec = BenchmarkSpec()
    mode: Literal["fwi_only", "tomo_then_fwi", "joint_two_stage"] = "joint_two_stage"
    data_file: Optional[Path] = None
    output_dir: Path = DEFAULT_OUTPUT_DIR
    threads: int = Field(1, ge=1)
    seed: int = 0

    @model_validator(mode="after")
    def _check(self) -> "RunConfig":
        ndim = len(self.grid.n)
        if len(self.padding.pad) != 2 * ndim:
            raise ValueError(f"padding.pad needs {2 * ndim} widths (lo, hi per axis)")
        if not self.frequencies_hz or any(f <= 0 for f in self.frequencies_hz):
            raise ValueError("frequencies_hz must be positive")
        if any(b <= a for a, b in zip(self.frequencies_hz, self.frequencies_hz[1:])):
            raise ValueError("frequencies_hz must be strictly increasing")
        if self.schedule.f_low > len(self.frequencies_hz):
            raise ValueError("schedule.f_low exceeds the number of frequencies")
        return self


def _model_at(model: Type[BaseModel], loc) -> Type[BaseModel]:
    for part in loc:
        field = model.model_fields.get(part) if isinstance(part, str) else None
        annotation = getattr(field, "annotation", None)
        if isinstance(annotation, type) and issubclass(annotation, BaseModel):
            model = annotation
        else:
            break
    return model


def config_error(error: ValidationError, model: Optional[Type[BaseModel]] = None) -> ConfigError:
    """First validation problem as a ConfigError, with a suggestion for unknown keys"""
    model = model or RunConfig
    first = error.errors()[0]
    loc = tuple(first.get("loc", ()))
    where = ".".join(str(p) for p in loc) or "<root>"
    if first.get("type") == "extra_forbidden" and loc:
        candidates = list(_model_at(model, loc[:-1]).model_fields)
        match = process.extractOne(str(loc[-1]), candidates) if candidates else None
        suggestion = match[0] if match and match[1] >= 60 else None
        return ConfigError(f"Unknown configuration key '{where}'", suggestion)
    return ConfigError(f"Invalid configuration at '{where}': {first.get('msg')}")


def resolve_mode(name: str) -> str:
    """Validate an inversion mode name, suggesting the closest one on a typo"""
    if name in INVERSION_MODES:
        return name
    match = process.extractOne(name, INVERSION_MODES)
    suggestion = match[0] if match and match[1] >= 60 else None
    raise ConfigError(f"Unknown inversion mode '{name}'", suggestion)


def parse_run_config(document: Dict[str, Any]) -> RunConfig:
    try:
        return RunConfig.model_validate(document)
    except ValidationError as e:
        raise config_error(e) from e


def load_run_config(path: Path) -> RunConfig:
    """Read and validate a JSON configuration document"""
    text = Path(path).read_text()
    try:
        document = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(f"Malformed JSON in {path}: {e.msg}", len(text[:e.pos].encode())) from e
    if not isinstance(document, dict):
        raise ConfigError("Configuration must be a JSON object")
    return parse_run_config(document)


class SimulateCommand(BaseModel):
    config: RunConfig
    out_dir: Path = DEFAULT_OUTPUT_DIR


class InvertCommand(BaseModel):
    config: RunConfig
    mode: Literal["fwi_only", "tomo_then_fwi", "joint_two_stage"] = "joint_two_stage"
    out_dir: Path = DEFAULT_OUTPUT_DIR
    data_path: Optional[Path] = None


class BenchCommand(BaseModel):
    spec: BenchmarkSpec
    out_dir: Path = DEFAULT_OUTPUT_DIR
    seed: int = 0


class RenderCommand(BaseModel):
    model_config = ConfigDict(protected_namespaces=())

    model_path: Path
    output_path: Optional[Path] = None
    slice_index: Optional[int] = None


class SimulateResult(BaseModel):
    data_path: Path
    truth_path: Path
    n_sources: int
    n_frequencies: int
    n_receivers: int


class InvertResult(BaseModel):
    model_config = ConfigDict(protected_namespaces=())

    model_path: Path
    history_path: Path
    stage_misfits_path: Path
    iterations: int
    final_phi: Optional[float] = None
    flags: List[str] = []
    relative_model_error: Optional[float] = None


class BenchRow(BaseModel):
    grid: str
    method: str
    block: int
    setup_s: float
    cycles_mean: float
    solve_s_per_rhs: float
    converged: bool


class BenchResult(BaseModel):
    csv_path: Path
    rows: List[BenchRow]


class RenderResult(BaseModel):
    image_path: Path
    width: int
    height: int
