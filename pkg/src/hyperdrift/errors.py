"""Exception hierarchy shared by all modules."""


class HyperdriftError(Exception):
    """Base class for errors raised by this package."""


class InvalidStateError(HyperdriftError, ValueError):
    """A state vector is not finite or has the wrong shape."""


class DomainError(HyperdriftError, ValueError):
    """An argument lies outside the domain of an operation."""


class ThresholdNotMetError(HyperdriftError):
    """The pullback rate does not exceed the threshold needed for decay constants."""

    def __init__(self, lam, threshold):
        self.lam = lam
        self.threshold = threshold
        super().__init__(
            f"lambda={lam!r} does not exceed the decay threshold Lambda={threshold!r}"
        )


class CapabilityError(HyperdriftError):
    """The model lacks a field required by the requested operation."""


class DivergedError(HyperdriftError, FloatingPointError):
    """Numerical integration produced a non-finite value."""

    def __init__(self, step, message=None):
        self.step = step
        super().__init__(message or f"integration diverged at step {step}")


class ConfigError(HyperdriftError, ValueError):
    """A run configuration failed validation."""
