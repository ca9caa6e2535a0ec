"""Exception types shared across the library."""


class OliverError(Exception):
    """Base class for all library errors."""


class DimensionMismatch(OliverError):
    pass


class NotUnipotent(OliverError):
    pass


class LogDomain(OliverError):
    """Matrix log/exp requested outside the nilpotence-index < p+1 domain."""


class NotPGroup(OliverError):
    pass


class CapExceeded(OliverError):
    def __init__(self, message, partial_count=None):
        super().__init__(message)
        self.partial_count = partial_count


class NoProductMaximal(OliverError):
    """No abelian product subgroup of maximum order exists outside V."""


class NonAbelianBracket(OliverError):
    pass


class HypothesisFailed(OliverError):
    pass


class PreconditionFailed(OliverError):
    def __init__(self, name, message=""):
        super().__init__(message or name)
        self.name = name


class TheoremViolation(OliverError):
    """A machine-checked theorem assertion failed: counterexample candidate.

    Carries a certificate dict so the failure can be re-verified externally.
    """

    def __init__(self, message, certificate=None):
        super().__init__(message)
        self.certificate = certificate or {}


class NoQuadraticInOmega1ZN(TheoremViolation):
    pass


class ClassTooHigh(OliverError):
    pass


class ClosureFailure(OliverError):
    pass


class NonCommutingConjugates(OliverError):
    pass


class UnsupportedInstance(OliverError):
    pass


class InputFormatError(OliverError):
    pass
