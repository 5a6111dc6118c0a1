"""Exception types shared across the package."""


class ShapeError(ValueError):
    """An array does not have the shape an operation requires."""


class ConfigurationError(ValueError):
    """A configuration is internally inconsistent or unbuildable."""


class StateError(RuntimeError):
    """An operation was invoked on an object in the wrong state."""


class GenerationError(RuntimeError):
    """Random scene generation could not satisfy its constraints."""
