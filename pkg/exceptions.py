class RogoError(Exception):
    """Root of every error raised by the library."""


class InvalidInputError(RogoError, ValueError):
    pass


class PreconditionError(RogoError, ValueError):
    pass


class EmptySpaceError(RogoError, ValueError):
    pass


class NumericalFailureError(RogoError, ArithmeticError):
    def __init__(self, message: str, iterations: int):
        super().__init__('%s (after %i iterations)' % (message, iterations))
        self.iterations = iterations


class TaskLookupError(RogoError, KeyError):
    pass


class FormatError(RogoError, ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__('%s at byte offset %i' % (message, offset))
        self.offset = offset


class ConfigError(RogoError, ValueError):
    def __init__(self, message: str, path=None, line=None):
        where = ''
        if path is not None:
            where = ' [%s' % path + (':%i]' % line if line is not None else ']')
        super().__init__(message + where)
        self.path = path
        self.line = line


class VerificationError(RogoError, AssertionError):
    def __init__(self, message: str, instance=None):
        super().__init__(message)
        self.instance = instance
