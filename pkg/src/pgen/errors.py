"""Exception hierarchy shared by every pgen module."""


class PgenError(Exception):
    """Base class for all errors raised by pgen."""


class ConfigError(PgenError):
    pass


class DuplicateRegistration(PgenError):
    pass


class UnknownPlugin(PgenError):
    pass


class RegistryFrozen(PgenError):
    pass


class IoError(PgenError):
    pass


class NotFound(IoError, FileNotFoundError):
    pass


class PermissionDenied(IoError, PermissionError):
    pass


class WriterClosed(IoError):
    pass


class ParseError(PgenError):
    def __init__(self, line: int, message: str = ""):
        self.line = line
        super().__init__(f"line {line}: {message}" if message else f"line {line}")


class LengthMismatch(PgenError, ValueError):
    pass


class EmptyCorpus(PgenError, ValueError):
    pass


class MissingField(PgenError, KeyError):
    pass


class EmptyBatch(PgenError, ValueError):
    pass


class SampleTooLong(PgenError, ValueError):
    def __init__(self, index: int, length: int, budget: int):
        self.index = index
        super().__init__(f"sample {index} has length {length} > max_tokens {budget}")


class BadShard(PgenError, ValueError):
    pass


class ShapeMismatch(PgenError, ValueError):
    pass


class NotScalar(PgenError, ValueError):
    pass


class TargetOutOfRange(PgenError, ValueError):
    pass


class PositionOverflow(PgenError, ValueError):
    pass


class BadIteration(PgenError, ValueError):
    pass


class EmptyList(PgenError, ValueError):
    pass


class UnknownSchedule(PgenError, ValueError):
    pass


class FormatError(PgenError, ValueError):
    pass


class Empty(PgenError, ValueError):
    pass
