# config.py

# Name recorded in run manifests and used as the CLI program name.
APP_NAME = "impulse-zmpc"

# Environment variable holding the log level ("Normal" or "Debug").
LOG_LEVEL_ENV = "IZMPC_LOG_LEVEL"

# --- Integration ---
DEFAULT_ABS_TOL = 1e-9
DEFAULT_REL_TOL = 1e-9
DEFAULT_MAX_STEP = 1.0
DEFAULT_METHOD = "rk45"

# --- Lipschitz estimation ---
LIPSCHITZ_GRID_PER_DIM = 20
LIPSCHITZ_MAX_EVALUATIONS = 1_000_000
LIPSCHITZ_TIME_SAMPLES = 61
FD_JACOBIAN_STEP = 1e-6

# --- Sets ---
MEMBERSHIP_TOL = 1e-9
EQUILIBRIUM_TOL = 1e-7
TARGET_GRID_PER_DIM = 15
ORBIT_RESOLUTION = 30
CAPTURE_FACTOR = 2.0
HULL_SHRINK_FACTOR = 0.95
HULL_SHRINK_ROUNDS = 40
HULL_CHECK_POINTS = 200

# --- Simulation ---
SAMPLES_PER_PERIOD = 50

# --- MPC ---
SOLVER_TOL = 1e-6
SOLVER_MAX_ITER = 200
PENALTY_INIT = 10.0
PENALTY_GROWTH = 10.0
MAX_OUTER_ROUNDS = 8
FD_GRADIENT_STEP = 1e-6
DISTANCE_SMOOTHING = 1e-3
ORBIT_PENALTY_SAMPLES = 10
INNER_FTOL = 1e-12
INNER_GTOL = 1e-9
# Gauss-Newton sweeps that close the equality constraints after each solve.
PROJECTION_SWEEPS = 10
PROJECTION_TARGET = 1e-9

# --- Analysis ---
DEFAULT_EPS = 0.05
DEFAULT_SETTLE_FRACTION = 0.3

# --- Oracle comparison (runs with N*m <= 3 and a single stored pair) ---
ORACLE_RANDOM_STATES = 20
ORACLE_TOL = 1e-3
ORACLE_GRID_PER_INPUT = 401
ORACLE_ZOOM_LEVELS = 3
