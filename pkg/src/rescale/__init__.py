"""Quasi-stationary Monte Carlo by rescaled rebirth, with a deterministic semiflow oracle."""
from .errors import (AssumptionViolationError, ConfigError, GridTooCoarseError, InvalidDensityError,
                     InvalidInputError, NumericalError, RescaleError)
from .torus import FourierField, builtin_field, cosexp, trimodal, wrap
from .killing import KillingRate, calibrate_K, certify, certify_bounds, kappa_from_pi
from .occupation import OccupationMeasure, WeightSchedule, dw_distance, tv_distance
from .sde import RngStreams, euler_step, simulate_lifetime
from .engine import RunConfig, RunTrace, replay, run
from .oracle import Oracle

__version__ = "0.1.0"
