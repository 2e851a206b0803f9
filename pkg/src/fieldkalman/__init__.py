"""Optimal linear filtering of a finite-dimensional state observed through a
spatially correlated random field."""

__version__ = "0.1.0"

from .filter import FilterState, SystemModel, run_filter
from .gain import AssumptionError, RegularizationPolicy, precompute_gain
from .grid_fourier import GriddedFunction, GridSpec, forward_ct, inverse_ct
from .pinhole_sim import PinholeScenario, monte_carlo_mse
from .random_field import CirculantSampler, SquaredExponentialKernel
from .riccati import DareProblem, solve_dare
