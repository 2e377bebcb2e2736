"""Exception hierarchy shared by every module."""


class SviError(Exception):
    """Base class for package errors."""


class ContractError(SviError, ValueError):
    """A precondition on the arguments of an operation was violated."""


class InvalidParameterError(SviError, ValueError):
    """A natural parameter lies outside its family's domain."""


class NumericalError(SviError, ArithmeticError):
    """Non-finite values appeared during inference."""

    def __init__(self, message, iteration=None):
        if iteration is not None:
            message = f"iteration {iteration}: {message}"
        super().__init__(message)
        self.iteration = iteration


class DataError(SviError):
    """A dataset could not be read or failed validation."""


class ParseError(DataError):
    def __init__(self, message, line=None, path=None):
        where = []
        if path is not None:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        if where:
            message = f"{':'.join(where)}: {message}"
        super().__init__(message)
        self.line = line
        self.path = path


class ConfigError(SviError):
    """An experiment configuration is inconsistent."""
