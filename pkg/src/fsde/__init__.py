"""Simulation and verification toolkit for Caputo fractional SDEs of order
1/2 < alpha < 1: special functions, reproducible Brownian ensembles,
singular-kernel pathwise solvers, Picard iteration in the Mittag-Leffler
weighted norm, and Monte Carlo checks of the separation and Lyapunov
properties of such systems."""

__version__ = "0.1.0"

from ._backend import available_backends, get_backend
from .analysis import (
    ContractionReport,
    LyapunovReport,
    SeparationReport,
    WeightedNormConfig,
    contraction_diagnostic,
    gamma_threshold,
    kappa,
    lyapunov_experiment,
    ms_norm,
    separation_experiment,
    weighted_distance,
    weighted_norm,
)
from .exceptions import (
    BlowUpError,
    ConvergenceError,
    FsdeError,
    FsdeValueError,
    MlOverflowError,
)
from .models import (
    DomainSample,
    FsdeProblem,
    InitialCondition,
    LinearFsde,
    builtin,
    check_h1,
    check_h2,
)
from .solver import (
    PathEnsemble,
    PicardHistory,
    drift_weights,
    picard_apply,
    picard_solve,
    solve_em,
    stoch_weights,
)
from .specfun import (
    MlQuery,
    gamma_fn,
    mittag_leffler,
    mittag_leffler_log,
    ml_renewal_residual,
    ml_weight,
    ml_weight_log,
)
from .stochastic import (
    BrownianEnsemble,
    TimeGrid,
    make_grid,
    sample_ensemble,
)

__all__ = [
    "__version__",
    "available_backends", "get_backend",
    "ContractionReport", "LyapunovReport", "SeparationReport",
    "WeightedNormConfig", "contraction_diagnostic", "gamma_threshold",
    "kappa", "lyapunov_experiment", "ms_norm", "separation_experiment",
    "weighted_distance", "weighted_norm",
    "BlowUpError", "ConvergenceError", "FsdeError", "FsdeValueError",
    "MlOverflowError",
    "DomainSample", "FsdeProblem", "InitialCondition", "LinearFsde",
    "builtin", "check_h1", "check_h2",
    "PathEnsemble", "PicardHistory", "drift_weights", "picard_apply",
    "picard_solve", "solve_em", "stoch_weights",
    "MlQuery", "gamma_fn", "mittag_leffler", "mittag_leffler_log",
    "ml_renewal_residual", "ml_weight", "ml_weight_log",
    "BrownianEnsemble", "TimeGrid", "make_grid", "sample_ensemble",
]
