"""Exception types shared across the package.

Every failure mode that callers are expected to catch gets its own class;
plain ValueError/TypeError are reserved for misuse of the API itself.
"""


class FalseTateError(Exception):
    """Base class for all package-specific errors."""


class DenominatorDivisibleByP(FalseTateError):
    """A rational was embedded whose denominator is divisible by p."""


class PrecisionLoss(FalseTateError):
    """A quantity is not determined by the known digits of its inputs."""


class AmbiguousLeading(FalseTateError):
    """Two terms tie at the minimal valuation and their residues cancel."""


class WindowBeyondAccumulation(FalseTateError):
    """A digit window reaches past an accumulation point of the support."""


class PrecisionExhausted(FalseTateError):
    """A computation needs more precision than the inputs carry."""


class NonCoprimeStop(FalseTateError):
    """A digit chain stopped at a valuation whose index is divisible by p."""


class NotCollapsible(FalseTateError):
    """No two consecutive stages of the chain share a key degree."""


class UnsupportedDivisor(FalseTateError):
    """Equivalence-divisibility was requested for a non-stage polynomial."""


class MissingBaseUniformizer(FalseTateError):
    """A tower level needs a base uniformizer that was not supplied."""
