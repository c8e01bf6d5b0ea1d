"""Exception types raised across the package."""


class DimensionError(ValueError):
    """Array shapes or sizes disagree."""


class SupportError(ValueError):
    """A parameter is nonzero outside the structure it is paired with."""


class StructureError(ValueError):
    """A structure violates acyclicity or binarity."""


class ParseError(ValueError):
    """A dataset or artifact file could not be parsed."""


class BoundsError(ValueError):
    """A count or fraction is outside its admissible range."""


class DomainError(ValueError):
    """A point lies outside the domain of a function."""


class NoSolutionError(RuntimeError):
    """The structure solver stopped without any feasible incumbent."""
