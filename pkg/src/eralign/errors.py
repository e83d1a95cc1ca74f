"""Exception types shared across the package."""


class InvalidArgument(ValueError):
    pass


class ConfigError(ValueError):
    pass


class ConvergenceError(RuntimeError):
    """Iterative fit stopped at its step budget without meeting tolerance."""

    def __init__(self, message, tv_distance=float("nan"), steps=0):
        super().__init__(message)
        self.tv_distance = tv_distance
        self.steps = steps


class TrainingFailure(RuntimeError):
    pass


class DegenerateWeightError(InvalidArgument):
    pass


class TokenizationError(ValueError):
    def __init__(self, message, position):
        super().__init__(f"{message} at position {position}")
        self.position = position


class PropertyError(ValueError):
    """Raised when a property cannot be evaluated for a parsed molecule."""
