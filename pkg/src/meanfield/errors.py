"""Exception hierarchy shared across the package."""


class MeanFieldError(Exception):
    """Base class for all package errors."""


class ConfigError(MeanFieldError):
    """Invalid configuration.

    Carries a list of ``(code, message)`` violations so callers can report
    every broken condition at once rather than the first one only.
    """

    def __init__(self, violations):
        if isinstance(violations, str):
            violations = [("config", violations)]
        self.violations = list(violations)
        super().__init__("; ".join(f"[{c}] {m}" for c, m in self.violations))

    @property
    def codes(self):
        return [c for c, _ in self.violations]


class CapabilityError(MeanFieldError):
    """Requested derivative order is not available for a kernel class."""


class NumericalError(MeanFieldError):
    """Base class for failures of a numerical run (exit status 3)."""


class BlowUpError(NumericalError):
    def __init__(self, message, index=None, time=None):
        self.index = index
        self.time = time
        super().__init__(message)


class CFLError(NumericalError):
    def __init__(self, message, constraint=None):
        self.constraint = constraint
        super().__init__(message)


class NegativeDensityError(NumericalError):
    pass


class CoverageError(MeanFieldError):
    """Particles (plus kernel support) fall outside an evaluation grid."""


class ConsistencyError(MeanFieldError):
    """An internal identity that must hold exactly was violated."""


class MassMismatchError(MeanFieldError):
    pass


class AliasingWarning(UserWarning):
    """Fourier self-check grid too coarse or too small for the kernel."""
