"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Array dimensions do not satisfy an operation's contract."""


class NumericError(ArithmeticError):
    """Non-finite values or a degenerate numerical computation."""


class TrainingError(NumericError):
    """Training diverged; carries the epoch where it happened."""

    def __init__(self, message: str, epoch: int):
        super().__init__(message)
        self.epoch = epoch


class FormatError(ValueError):
    """A serialized artifact is malformed; carries the byte offset."""

    def __init__(self, message: str, offset: int = 0):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class ConfigError(ValueError):
    """Invalid experiment configuration."""


class MissingInputError(FileNotFoundError):
    """A command's required input artifacts are absent or corrupt."""

    def __init__(self, message: str, paths=()):
        super().__init__(message)
        self.paths = list(paths)
