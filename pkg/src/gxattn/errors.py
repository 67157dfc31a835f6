"""Exception taxonomy shared by every module."""


class ShapeError(ValueError):
    """Operand shapes (or an axis argument) violate an operation's contract."""


class ConfigError(ValueError):
    """A configuration value is invalid, e.g. an indivisible group factor."""


class ContractError(ValueError):
    """A call violates an API precondition that is not a pure shape issue."""


class NumericError(ArithmeticError):
    """A computation produced non-finite values from finite inputs."""


class FileFormatError(ValueError):
    """A tensor file or manifest does not follow the expected binary layout."""
