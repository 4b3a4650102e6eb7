"""Exception types shared across the package."""


class MlatError(Exception):
    """Base class for all package errors."""


class ShapeMismatch(MlatError):
    """Operands of a primitive have incompatible shapes."""

    def __init__(self, op: str, *shapes):
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {self.shapes}")


class UnresolvedParameter(MlatError):
    """A parameter node names a tensor missing from the store."""


class NonScalarRoot(MlatError):
    """gradient() was called on a non-scalar expression."""


class NumericalFailure(MlatError):
    """A non-finite value was produced where finiteness is required."""


class DegenerateRotation(MlatError):
    """6D rotation input with zero or parallel columns."""


class ConfigError(MlatError):
    """Malformed or unknown configuration content."""


class PrerequisiteError(MlatError):
    """A training stage was invoked without its required checkpoint."""


class PairingError(MlatError):
    """Evaluation inputs could not be matched one-to-one."""
