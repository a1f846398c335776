"""Over-the-air federated learning under Rayleigh fading with truncated
channel inversion, with and without error-feedback memory."""
from .bounds import BoundBreakdown, BoundInputs, bound_airfl_mem, bound_no_memory, bound_short_term
from .channel import compute_pathloss, compute_rho, ota_round
from .config import ExperimentConfig
from .errors import (
    AirFLError,
    ConfigError,
    ConvergenceError,
    DimensionError,
    DomainError,
    FormatError,
    NumericalError,
)
from .experiment import estimate_constants, run_experiment, sweep_snr
from .feedback import SCHEMES, scheme_round, simulate
from .learning import fedavg_update, local_sgd_round
from .rng import Streams
from .thresholds import OptInputs, certify_convexity, objective_p1prime, solve_thresholds

__version__ = "0.1.0"
