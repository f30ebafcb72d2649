"""Exception hierarchy shared by every module."""


class MedimError(Exception):
    """Base class. Subclasses map onto CLI exit codes."""

    exit_code = 3


class ConfigError(MedimError, ValueError):
    """Bad parameters or precondition violations."""

    exit_code = 2


class AlgorithmError(MedimError, RuntimeError):
    """An algorithm could not produce a valid result for this input."""

    exit_code = 3


class ImageIOError(MedimError, OSError):
    exit_code = 4
