"""Exception hierarchy shared by the library and the CLI."""


class LqKernelError(Exception):
    """Base class for all errors raised by lqkernel."""


class InputError(LqKernelError, ValueError):
    """Malformed or incompatible inputs (shapes, domains, empty data)."""


class ConfigError(LqKernelError, ValueError):
    """Invalid configuration values."""


class NumericalError(LqKernelError, ArithmeticError):
    """A computation produced non-finite values or failed to converge."""


class SolverError(NumericalError):
    """A linear solve or optimisation routine could not proceed."""

    def __init__(self, message, condition=None):
        super().__init__(message)
        self.condition = condition
