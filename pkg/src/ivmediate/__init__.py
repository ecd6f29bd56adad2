"""Mediation analysis for randomized trials using assignment-by-covariate
interactions as instrumental variables."""
from .dataset import ColumnMap, Dataset, DesignBundle, LoadReport, build_designs, load_csv
from .errors import (
    ConfigError,
    DataError,
    IvMediationError,
    NumericalError,
    RankDeficient,
    WeakInstrumentWarning,
)
from .estimators import (
    IvDiagnostics,
    MediationFit,
    fit_direct_adjusted,
    fit_standard,
    fit_two_stage,
    partial_f,
    robust,
    sandwich_covariance,
    weak_iv_threshold,
)
from .numkit import fit_logistic, solve_least_squares
from .sensitivity import SensitivityGrid, TauPoint, fit_at_tau, run_grid, transform_outcome
from .simlab import (
    McReport,
    ScenarioSpec,
    check_moment_conditions,
    generate,
    load_scenario,
    run_monte_carlo,
)

__version__ = "0.1.0"
