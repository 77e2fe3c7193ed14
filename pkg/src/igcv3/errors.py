"""Exception types raised across the package."""


class ShapeError(ValueError):
    """Operand shapes do not fit together."""


class ConfigError(ValueError):
    """A structural setting (group count, width, divisor) is invalid."""


class ComplementarityError(ConfigError):
    """Two group convolutions fail the complementary condition."""


class UnsupportedCompositionError(ValueError):
    """A kernel chain cannot be collapsed into one numeric matrix."""


class EmptyInputError(ValueError):
    """An operation received zero samples where statistics are needed."""


class ContractError(RuntimeError):
    """A caller broke an ordering or bookkeeping contract (e.g. stale cache)."""


class TrainingError(RuntimeError):
    """Training produced a non-finite or runaway loss."""

    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch
