"""Exception taxonomy shared by the whole package.

The CLI maps these onto distinct exit codes, so new failure modes should
subclass an existing family rather than raise bare ValueErrors.
"""


class PforgeError(Exception):
    """Base class for all package errors."""


class MixedComponents(PforgeError):
    """Letters from different system components in one word."""


class SystemMismatch(PforgeError):
    """Operands defined over incompatible free group systems."""


class NotAnAutomorphism(PforgeError):
    """A candidate endomorphism failed the folding verification."""


class NotInvariant(PforgeError):
    """Vertex groups are not permuted (up to conjugacy) by the automorphism."""


class NotIrreducible(PforgeError):
    """Transition matrix is not irreducible."""


class IterationBudgetExceeded(PforgeError):
    """A move/search budget ran out; carries diagnostics."""

    def __init__(self, message, log=None):
        super().__init__(message)
        self.log = log or []


class NoConvergence(PforgeError):
    """A numeric iteration failed to stabilize within its budget."""


class StabilizerViolation(PforgeError):
    """A solved attaching point is moved by its direction stabilizer."""


class DepthExceeded(PforgeError):
    """A query needs points beyond the materialized ball."""


class NotStabilized(PforgeError):
    """Orbit enumeration kept growing at the configured depth."""


class Degenerate(PforgeError):
    """The splitting has no edges."""


class EmptyDomain(PforgeError):
    """Projection onto an empty subtree."""


class ParseError(PforgeError):
    """Malformed input file."""


class StabilizerHeuristicExhausted(PforgeError):
    """Bounded conjugator/stabilizer search ran out of budget."""
