"""File-based pipeline: simulation, odometry, reconstruction and evaluation."""
from .config import ConfigError, RunConfig
from .evaluation import EfficiencyFactors, compute_ate, efficiency_factors
from .odometry import OdometryResult, run_odometry, write_odometry
from .reconstruction import run_reconstruction

__all__ = [
    "ConfigError", "RunConfig", "EfficiencyFactors", "compute_ate", "efficiency_factors",
    "OdometryResult", "run_odometry", "write_odometry", "run_reconstruction",
]
