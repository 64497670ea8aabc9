"""Multi-block linearized ADMM with variance-reduced stochastic gradients."""

from .admm import CompositeProblem, HyperParams, SolverKind, Trace, derive_hyperparams, run
from .errors import (
    AssumptionViolation,
    CapabilityError,
    DivergenceError,
    HyperparameterError,
    SpiderAdmmError,
)
from .losses import MultitaskLoss, QuadraticLoss, SampleSet, SigmoidLoss
from .regularizers import L1, Nuclear, Zero

__version__ = "0.1.0"

__all__ = [
    "CompositeProblem",
    "HyperParams",
    "SolverKind",
    "Trace",
    "derive_hyperparams",
    "run",
    "AssumptionViolation",
    "CapabilityError",
    "DivergenceError",
    "HyperparameterError",
    "SpiderAdmmError",
    "MultitaskLoss",
    "QuadraticLoss",
    "SampleSet",
    "SigmoidLoss",
    "L1",
    "Nuclear",
    "Zero",
]
