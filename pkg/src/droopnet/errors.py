"""Exception hierarchy.

Input problems derive from :class:`ValidationError`; failures of a numerical
routine on valid input derive from :class:`NumericalError`. The command line
front end maps the two families to distinct exit codes.
"""


class DroopNetError(Exception):
    """Base class for all package errors."""


class ValidationError(DroopNetError, ValueError):
    """Invalid input data."""


class NumericalError(DroopNetError, ArithmeticError):
    """A numerical routine failed on otherwise valid input."""


# graph
class DisconnectedGraph(ValidationError):
    pass


class DuplicateEdge(ValidationError):
    pass


class NonpositiveWeight(ValidationError):
    pass


class DimensionMismatch(ValidationError):
    pass


class EigensolverFailure(NumericalError):
    pass


# flow problem
class EnumerationTooLarge(ValidationError):
    pass


class NoKktPointFound(NumericalError):
    pass


class AmbiguousActiveSet(NumericalError):
    pass


class EmptyActiveSet(ValidationError):
    pass


# dynamics
class NegativeDualState(ValidationError):
    pass


class NonFiniteState(NumericalError):
    pass


# rates
class LicqViolated(NumericalError):
    pass


class NoPositiveBeta(NumericalError):
    pass


class AllNodesActive(ValidationError):
    pass


class NonpositiveD0(ValidationError):
    pass


class EdgeExists(ValidationError):
    pass


class DegreeCapViolated(ValidationError):
    pass


class WeightTooLarge(ValidationError):
    pass


class DegenerateCertificateWarning(UserWarning):
    """A certificate constant collapsed to a boundary value (e.g. zero slack)."""


# scenarios
class ParseError(ValidationError):
    """Malformed scenario file; ``line`` and ``field`` locate the problem."""

    def __init__(self, message, line=None, field=None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field '{field}'")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)


class InsufficientDecay(NumericalError):
    pass
