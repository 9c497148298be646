"""Joint-transmission CoMP weighted sum-rate beamforming.

Centralized WMMSE, decentralized best response / ADMM / gradient solvers on
stream-specific estimates or directly on pilot observations, backhaul
quantization and user admission on time-correlated multicell channels.
"""

from .config import ScenarioConfig, derive_doppler, load_config
from .errors import ConfigurationError, ConvergenceError, DomainError
from .experiment import run_scenario, run_sweep
from .system import ClusterMap, Scenario, random_scenario
from .wmmse import run_centralized

__all__ = [
    "ClusterMap", "ConfigurationError", "ConvergenceError", "DomainError",
    "Scenario", "ScenarioConfig", "derive_doppler", "load_config",
    "random_scenario", "run_centralized", "run_scenario", "run_sweep",
]

__version__ = "0.1.0"
