"""Exception hierarchy shared by every nerdlab module."""


class NerdLabError(Exception):
    """Base class for all errors raised by nerdlab."""


class InvalidArgumentError(NerdLabError, ValueError):
    pass


class DegenerateInputError(NerdLabError, ValueError):
    """Input is well-formed but has no variance where the statistic needs some."""


class SingularDesignError(NerdLabError, ValueError):
    pass


class InsufficientDataError(NerdLabError, ValueError):
    pass


class NumericFailureError(NerdLabError, ArithmeticError):
    """A computation produced non-finite values.

    ``step`` is the denoising step (0-based position in the episode) or the
    training epoch at which the failure was detected, when known.
    """

    def __init__(self, message, step=None):
        if step is not None:
            message = f"{message} (at step {step})"
        super().__init__(message)
        self.step = step


class DatasetParseError(NerdLabError, ValueError):
    def __init__(self, message, line=None, column=None):
        if line is not None:
            message = f"{message} (line {line}, column {column})"
        super().__init__(message)
        self.line = line
        self.column = column


class FormatVersionError(NerdLabError, ValueError):
    pass
