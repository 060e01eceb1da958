"""Exception types shared across the package."""


class KslabError(Exception):
    """Base class for all package errors."""


class ConfigError(KslabError, ValueError):
    """Invalid configuration. May carry several violations at once."""

    def __init__(self, violations):
        if isinstance(violations, str):
            violations = [violations]
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class SingularityError(KslabError, ValueError):
    """Kernel evaluated at its singular point."""


class DegenerateFitError(KslabError, ValueError):
    """Regression requested on degenerate abscissae."""


class BlowUpError(KslabError, RuntimeError):
    """A particle coordinate became non-finite during time stepping."""

    def __init__(self, particle, step, message=None):
        self.particle = int(particle)
        self.step = int(step)
        super().__init__(
            message or f"non-finite coordinate for particle {particle} at step {step}"
        )


class OutOfDomainError(KslabError, RuntimeError):
    """A trajectory left the interpolation margin of the field grid."""

    def __init__(self, particle, t, message=None):
        self.particle = int(particle)
        self.t = float(t)
        super().__init__(
            message or f"particle {particle} left the grid margin at t={t:.6g}"
        )


class StepSizeError(ConfigError):
    """Requested time step violates the stability condition."""

    def __init__(self, dt, suggested_dt):
        self.dt = float(dt)
        self.suggested_dt = float(suggested_dt)
        super().__init__(
            f"dt={dt:.6g} violates the step bound; use dt <= {suggested_dt:.6g}"
        )


class FormatError(KslabError, ValueError):
    """Malformed or incompatible binary snapshot/field file."""
