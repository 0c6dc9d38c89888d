"""Exception hierarchy for numerical failures."""


class CyclePerturbError(Exception):
    """Base class for all numerical failures raised by the package."""


class StepSizeUnderflow(CyclePerturbError):
    pass


class EquilibriumSeed(CyclePerturbError):
    pass


class NotACycle(CyclePerturbError):
    pass


class DegenerateCycle(CyclePerturbError):
    pass


class NoTransversalZero(CyclePerturbError):
    pass


class ChatteringLimit(CyclePerturbError):
    pass


class NoConvergence(CyclePerturbError):
    def __init__(self, message, iterations=0, best_residual=float("nan"), diagnostic=None):
        super().__init__(message)
        self.iterations = iterations
        self.best_residual = best_residual
        self.diagnostic = diagnostic or {}


class NonPeriodicPolicy(CyclePerturbError):
    pass


class NoRootInBox(CyclePerturbError):
    pass


class IllConditioned(CyclePerturbError):
    pass


class NotSymmetric(CyclePerturbError):
    pass


class ConfigError(Exception):
    """Raised for malformed or inconsistent experiment configuration."""
