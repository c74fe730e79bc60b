from pathlib import Path
import math

DEFAULT_OUTPUT_DIR = Path("./seistomo_out")
DEFAULT_FIELD_CACHE_DIR = Path(".cache") / "wavefields"

# Discretization
MIN_POINTS_PER_WAVELENGTH = 10.0
DENSE_LU_MAX_NODES = 4096

# Multigrid
DEFAULT_MG_LEVELS = 3
DEFAULT_SHIFT_FACTOR = 0.2
DEFAULT_JACOBI_WEIGHT = 0.8
DEFAULT_PRE_RELAX = 2
DEFAULT_POST_RELAX = 2
K_CYCLE_INNER_ITERATIONS = 2

# Krylov
DEFAULT_SOLVER_TOL = 1e-6
DEFAULT_SOLVER_MAXIT = 200
FGMRES_RESTART = 5
BICGSTAB_MAX_RESTARTS = 2
BREAKDOWN_CONDITION = 1e14
ORTHOGONALITY_TOL = 1e-8

# Physics defaults for the 2D experiment
RICKER_PEAK_HZ = 8.0
BASE_ATTENUATION = 0.01 * 4.0 * math.pi
BENCH_ATTENUATION = 0.02 * math.pi
DEFAULT_FREQUENCIES_HZ = [2.0, 2.5, 3.5, 4.5, 6.0]
DEFAULT_NOISE_FRACTION = 0.01
WEIGHT_NOISE_FLOOR = 0.01
OFFSET_MIN = 50.0
OFFSET_MAX = 8000.0

# Regularization
REG_SHIFT_FRACTION = 1e-8
REG_DIRECT_MAX_NODES = 250_000
# Models are regularized in s^2/km^2 over km spacings
REG_MODEL_SCALE = 1e6
REG_LENGTH_SCALE = 1e-3

# Projected Gauss-Newton
ARMIJO_CONSTANT = 1e-4
BACKTRACK_FACTOR = 0.5
MAX_BACKTRACKS = 10
RELATIVE_GRADIENT_TOL = 1e-5
PCG_ITERATIONS = 5
PCG_TOL = 1e-3

# Two-stage schedule
BETA_STAGE_ONE = 2500.0
BETA_STAGE_TWO = 50.0
ALPHA_START = 1e4
ALPHA_DECAY = 10.0
SWEEPS = 3
GN_STAGE_ONE = 15
GN_STAGE_TWO = 5
BATCH_SIZE = 3
F_LOW = 1
VELOCITY_BOUNDS = (1500.0, 4500.0)

HISTORY_COLUMNS = [
    "iter", "stage", "sweep", "freq_batch", "phi_fwi", "phi_eik",
    "phi_reg", "phi_total", "step_length", "active_count",
]
STAGE_MISFIT_COLUMNS = ["stage", "sweep", "freq_batch", "phi_fwi_all", "phi_eik_all"]
BENCH_COLUMNS = ["grid", "method", "block", "setup_s", "cycles_mean", "solve_s_per_rhs", "converged"]
