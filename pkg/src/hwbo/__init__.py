"""Power- and memory-constrained Bayesian hyper-parameter search."""

from .acquisition import AcquisitionChoice, AcquisitionContext, expected_improvement, hw_cwei, hw_ieci
from .gp import GPFitError, KernelHyper, gp_fit, gp_posterior, optimize_hypers
from .harness import ConfigError, ExperimentConfig, JournalError, load_config, read_journal, run_experiment
from .hwmodels import Budget, HwLinearModel, ProfileSample, fit_linear, predict, rmspe
from .reports import ReportBundle, emit_reports
from .sim import SimObjective, SimScenario, brute_force_optimum, get_scenario, profile_offline, simulate_curve
from .solvers import EarlyTermPolicy, SolverConfig, TrialRecord, run_solver
from .space import ParamSpec, SearchSpace

__version__ = "0.1.0"

__all__ = [
    "AcquisitionChoice", "AcquisitionContext", "Budget", "ConfigError", "EarlyTermPolicy",
    "ExperimentConfig", "GPFitError", "HwLinearModel", "JournalError", "KernelHyper", "ParamSpec",
    "ProfileSample", "ReportBundle", "SearchSpace", "SimObjective", "SimScenario", "SolverConfig", "TrialRecord",
    "brute_force_optimum", "emit_reports", "expected_improvement", "fit_linear", "get_scenario",
    "gp_fit", "gp_posterior", "hw_cwei", "hw_ieci", "load_config", "optimize_hypers", "predict",
    "profile_offline", "read_journal", "rmspe", "run_experiment", "run_solver", "simulate_curve",
]
