"""Exception types shared across the package."""


class InputDomainError(ValueError):
    """An argument lies outside the domain an operation accepts."""


class DataFormatError(InputDomainError):
    """A dataset file or table could not be parsed or fails validation."""
