"""Exception types raised by the solvers and builders."""


class SpiderAdmmError(Exception):
    """Base class for package errors."""


class HyperparameterError(SpiderAdmmError, ValueError):
    """Step size / penalty cannot be derived (e.g. A lacks full column rank)."""


class AssumptionViolation(SpiderAdmmError, ValueError):
    """A problem builder produced a constraint matrix without full column rank."""


class CapabilityError(SpiderAdmmError, NotImplementedError):
    """The requested quantity is not computable for this input."""


class DivergenceError(SpiderAdmmError, FloatingPointError):
    """A non-finite iterate appeared."""

    def __init__(self, iteration, rho, eta, trace=None):
        self.iteration = iteration
        self.rho = rho
        self.eta = eta
        self.trace = trace
        super().__init__(
            f"non-finite iterate at iteration {iteration} (rho={rho:.6g}, eta={eta:.6g})"
        )
