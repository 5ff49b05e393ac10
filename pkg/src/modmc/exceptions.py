"""Exception types shared across the package."""


class ModmcError(Exception):
    """Base class for all package-specific errors."""


class NonFiniteDensity(ModmcError):
    """A log density or gradient evaluated to NaN or +inf.

    Carries the offending point so callers can report where the model
    misbehaved.  A value of -inf is not an error (it means zero density
    and leads to rejection).
    """

    def __init__(self, x, value=None):
        self.x = x
        self.value = value
        super().__init__(f"non-finite density value {value!r} at x={x!r}")


class NotIrreducible(ModmcError):
    """The estimated transition matrix is not numerically irreducible."""

    def __init__(self, message, diagnostic=None):
        self.diagnostic = diagnostic
        super().__init__(message)


class NegativeEigenvectorEntry(ModmcError):
    """The stationary eigenvector has a materially negative entry."""

    def __init__(self, vector, worst):
        self.vector = vector
        self.worst = worst
        super().__init__(
            f"stationary vector has negative entry {worst:.3e} below tolerance"
        )


class ResidualToleranceExceeded(ModmcError):
    """The computed stationary vector fails its residual bound."""


class MaxIterationsExceeded(ModmcError):
    """An iterative solver did not converge within its iteration cap."""


class ChainEscaped(ModmcError):
    """Internal bug guard: a constrained chain left its compartment."""


class ZeroLowerLevel(ModmcError):
    """Geometric level insertion was requested below a zero level."""


class TuningFailed(ModmcError):
    """Ladder tuning did not settle within the round limit."""

    def __init__(self, rounds, ladder):
        self.rounds = rounds
        self.ladder = ladder
        super().__init__(f"ladder tuning still inserting after {rounds} rounds")


class TooFewBlocks(ModmcError):
    """Block statistics need at least two complete blocks."""


class TruncationNotConverged(ModmcError):
    """The covariance series was truncated before its terms became negligible."""


class BootstrapDegenerate(ModmcError):
    """Too many bootstrap replicates were discarded as numerically invalid."""


class ConfigError(ModmcError):
    """A run configuration document failed validation."""
