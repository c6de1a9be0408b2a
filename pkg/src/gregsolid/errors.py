"""Exception types shared across the package."""


class GregSolidError(Exception):
    pass


class DomainError(GregSolidError, ValueError):
    """A parameter or point lies outside its admissible domain."""


class FittingError(GregSolidError):
    pass


class NumericError(GregSolidError, ArithmeticError):
    pass


class IngestionError(GregSolidError):
    """Model data could not be turned into a valid set of boundary patches."""
