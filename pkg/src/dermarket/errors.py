"""Exception hierarchy for the market simulator."""

from __future__ import annotations


class DerMarketError(Exception):
    """Base class for all library errors."""


class ParseError(DerMarketError):
    """Input file is malformed or violates its schema."""


class ValidationError(DerMarketError):
    """A model violates a structural invariant (names the offending element)."""


class UnknownHousehold(DerMarketError):
    """A household id is not mapped to any bus."""


class DomainError(DerMarketError):
    """A scalar argument is outside its mathematical domain."""


class DimensionMismatch(DerMarketError):
    """Array shapes or horizon lengths disagree."""


class InsufficientHistory(DerMarketError):
    """Not enough historical days to extract the requested quantiles."""


class ConfigError(DerMarketError):
    """Inconsistent run configuration (e.g. asymmetric trading partners)."""


class BoundsError(DerMarketError):
    """A computed physical quantity leaves its admissible interval."""


class MissingPrice(DerMarketError):
    """Settlement needs a price that was never recorded."""


class SolverError(DerMarketError):
    """Base class for optimization-kernel failures."""

    def __init__(self, message: str, tag: object | None = None):
        super().__init__(message if tag is None else f"{message} [constraint: {tag}]")
        self.tag = tag


class Infeasible(SolverError):
    """No feasible point exists (tag names the most implicated constraint)."""


class NumericalFailure(SolverError):
    """Backend hit an iteration limit or lost numerical accuracy."""


class BranchLimit(SolverError):
    """Branch-and-bound node cap exceeded; carries the best bound found."""

    def __init__(self, message: str, best=None, bound: float | None = None):
        super().__init__(message)
        self.best = best
        self.bound = bound


class NegativeGap(DerMarketError):
    """A method reports more profit than the perfect-information bound."""
