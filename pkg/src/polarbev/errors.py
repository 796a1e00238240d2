"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration, shapes, or parameters."""


class DomainError(ValueError):
    """Input outside the mathematical domain of an operation."""


class BehindCameraError(DomainError):
    """Point projects to non-positive camera depth."""


class DegenerateCenterError(DomainError):
    """Box center too close to the ego origin for polar encoding."""


class InvariantViolation(RuntimeError):
    """A checked runtime invariant did not hold."""
