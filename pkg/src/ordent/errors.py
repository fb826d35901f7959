"""Exception hierarchy shared by every module.

The CLI maps these onto exit codes: data errors exit 2, numerical errors exit 3.
"""


class OrdentError(Exception):
    """Base class for all package errors."""


class InvalidInputError(OrdentError, ValueError):
    pass


class NumericalError(OrdentError, ArithmeticError):
    pass


class DataFileError(OrdentError):
    """Problem reading or writing a dataset, checkpoint or config file."""


class MalformedFileError(DataFileError):
    pass


class ConsistencyError(DataFileError):
    pass


class VersionMismatchError(DataFileError):
    pass
