"""Trajectory-oriented Bayesian optimization with a common-random-number GP."""
from .crngp import AugmentedInput, CrnSurrogate, SeedSet, crn_covariance, crn_posterior, joint_sample
from .errors import ConfigError, ExhaustionError, NumericalError, SimulatorError, SizeError
from .gp import EvaluationDataset, HyperBounds, KernelSpec, build_covariance, fit_hyperparameters, posterior
from .metrics import dual_objective, rauc, rmse, threshold_counts
from .optimizer import METHODS, OptimizationTrace, TsConfig, run_ts
from .sir import PluginHandle, SirConfig, Trajectory, external_simulate, simulate_sir, sir_simulator

__all__ = [
    "AugmentedInput", "CrnSurrogate", "SeedSet", "crn_covariance", "crn_posterior", "joint_sample",
    "ConfigError", "ExhaustionError", "NumericalError", "SimulatorError", "SizeError",
    "EvaluationDataset", "HyperBounds", "KernelSpec", "build_covariance", "fit_hyperparameters", "posterior",
    "dual_objective", "rauc", "rmse", "threshold_counts",
    "METHODS", "OptimizationTrace", "TsConfig", "run_ts",
    "PluginHandle", "SirConfig", "Trajectory", "external_simulate", "simulate_sir", "sir_simulator",
]
