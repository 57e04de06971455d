"""Exception hierarchy shared by the codec, memory model and simulator."""


class FmcError(Exception):
    """Base class for all errors raised by fmcomp."""


class MalformedStreamError(FmcError, ValueError):
    """A compressed stream, tensor file or encoded block is inconsistent."""


class BufferFullError(FmcError):
    """A write would overflow one of the feature-map buffer banks."""

    def __init__(self, bank: int, fill: int, capacity: int):
        self.bank = bank
        self.fill = fill
        self.capacity = capacity
        super().__init__(
            f"bank {bank} would hold {fill} words, capacity is {capacity}"
        )


class InfeasiblePlanError(FmcError):
    """No row-frame tiling fits the layer into the on-chip buffers."""


class ConfigError(FmcError, ValueError):
    """Network configuration could not be parsed or is inconsistent."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
