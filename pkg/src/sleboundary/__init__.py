"""Monte Carlo laboratory for the boundary measure of chordal SLE, 4 < kappa < 8."""

__version__ = "0.1.0"

from .params import ParameterDomainError, SleParams, derive_params
from .flow import (
    ContractError, DriverRecord, FlowConfig, FlowResult, FlowState, IntegrationError,
    restart_flow, run_flow,
)
from .martingale import MartingaleSnapshot, compute_M
from .measure import CellGrid, IntervalSpec, cell_grid, mu_eps_mass, run_cells
from .stats import Estimate

__all__ = [
    "__version__", "ParameterDomainError", "SleParams", "derive_params", "ContractError", "DriverRecord",
    "FlowConfig", "FlowResult", "FlowState", "IntegrationError", "restart_flow", "run_flow",
    "MartingaleSnapshot", "compute_M", "CellGrid", "IntervalSpec", "cell_grid", "mu_eps_mass", "run_cells",
    "Estimate",
]
