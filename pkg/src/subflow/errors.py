"""Exception hierarchy.

Domain errors (numerical failure, bad system definitions) derive from
``SubflowError``; configuration problems derive from ``ConfigError`` so the
CLI can map them to distinct exit codes.
"""


class SubflowError(Exception):
    """Base class for numerical and domain errors."""


class UnknownSystem(SubflowError):
    pass


class MalformedPolynomial(SubflowError):
    pass


class NonFiniteState(SubflowError):
    """Integration produced NaN or infinite values."""


class MissingHint(SubflowError):
    """A bound was requested from a system without a growth/Lipschitz hint."""


class NoConvergence(SubflowError):
    pass


class StallError(SubflowError):
    """Too many consecutive rejected flow steps."""


class GridTooCoarse(SubflowError):
    pass


class InsufficientDecay(SubflowError):
    pass


class SingularSolve(SubflowError):
    pass


class ConfigError(Exception):
    """Base class for configuration errors; ``field`` names the offending key."""

    def __init__(self, field, message=""):
        self.field = field
        super().__init__(f"{field}: {message}" if message else field)


class ParseError(ConfigError):
    pass


class ValidationError(ConfigError):
    pass
