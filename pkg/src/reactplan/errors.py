"""Exception types shared across the package."""


class ReactplanError(Exception):
    """Base class for all package-specific errors."""


class InsufficientHistory(ReactplanError):
    """A past trajectory is too short to estimate a kinematic state."""


class HorizonMismatch(ReactplanError):
    """Trajectories that must share length and time step do not."""


class DimensionMismatch(ReactplanError):
    """Feature and weight vectors have different lengths."""


class NumericalFailure(ReactplanError):
    """A non-finite value appeared where the computation requires finite ones."""


class StateSpaceTooLarge(ReactplanError):
    """Exact enumeration was requested on an instance with too many joint states."""


class DegenerateCondition(ReactplanError):
    """Conditioning on an ego candidate whose probability mass is below epsilon."""


class EmptyConditioningSet(ReactplanError):
    """Set-conditioning requested with an empty candidate set."""


class InvalidSetSize(ReactplanError):
    """Interpolated objective requested with a set size outside [1, K]."""


class InvalidIgnoreSize(ReactplanError):
    """Ignore set size must be strictly smaller than the candidate count."""


class DivergenceError(ReactplanError):
    """Training loss exceeded the divergence threshold."""


class InvalidScenario(ReactplanError):
    """Scenario violates a load-time invariant (overlapping actors, bad route)."""


class InfeasiblePerturbation(ReactplanError):
    """Could not draw a non-overlapping perturbed scenario within the retry budget."""
