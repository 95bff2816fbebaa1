"""Asymptotic learning curves of regularized random-feature regression.

The theory side reduces the high-dimensional problem to a four-variable
scalar saddle point (:mod:`rfcurves.saddle`) whose solution yields training
error, generalization error and sparsity (:mod:`rfcurves.predictor`). The
finite-size simulator (:mod:`rfcurves.simulator`) checks those predictions.
"""
from .predictor import TheoryPrediction, gen_error, nonzero_fraction, predict, train_error
from .regularizers import CustomSeparable, ElasticNet, Lasso, Ridge, SignalSpec
from .saddle import ProblemSpec, SaddlePoint, SolverOptions, solve_saddle
from .simulator import ExperimentConfig, activation_constants, run_trials

__all__ = [
    "CustomSeparable",
    "ElasticNet",
    "ExperimentConfig",
    "Lasso",
    "ProblemSpec",
    "Ridge",
    "SaddlePoint",
    "SignalSpec",
    "SolverOptions",
    "TheoryPrediction",
    "activation_constants",
    "gen_error",
    "nonzero_fraction",
    "predict",
    "run_trials",
    "solve_saddle",
    "train_error",
]

__version__ = "0.1.0"
