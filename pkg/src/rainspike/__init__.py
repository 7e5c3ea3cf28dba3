"""Simulation and verification lab for a two-threshold stochastic rain model.

Subpackages:

* ``core``           shared parameter/path/event types and the RNG contract
* ``renewal``        exact first-passage laws, sampler, event-count tail bound
* ``simulate``       finite-rate hysteresis and teleporting-limit path engines
* ``fokker_planck``  finite-volume density solvers and the boundary-layer oracle
* ``converge``       Monte Carlo convergence experiments with rate fitting
* ``cli``            reproducible experiment runner
"""

from .core import (
    DEFAULT_EPS_SWEEP,
    DEFAULT_PARAMS,
    EventLog,
    ModelParams,
    NumericalError,
    ParamError,
    PathRecord,
    RngStream,
    gaussian_increments,
    validate,
)

__version__ = "0.1.0"

__all__ = [
    "DEFAULT_EPS_SWEEP",
    "DEFAULT_PARAMS",
    "EventLog",
    "ModelParams",
    "NumericalError",
    "ParamError",
    "PathRecord",
    "RngStream",
    "gaussian_increments",
    "validate",
    "__version__",
]
