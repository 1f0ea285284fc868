"""Error types raised across the toolkit.

Everything derives from TranAlignError so callers (and the CLI) can catch
one family; the subclasses keep failure categories distinguishable in tests.
"""


class TranAlignError(Exception):
    """Base class for all toolkit errors."""


class InvalidInputError(TranAlignError, ValueError):
    """An argument value violates a documented precondition."""


class ShapeError(TranAlignError, ValueError):
    """Array dimensions are inconsistent with what the operation requires."""


class RangeError(TranAlignError, ValueError):
    """A scalar falls outside its configured range."""


class DatasetError(TranAlignError, ValueError):
    """The dataset cannot support the requested operation (too few ids, empty split, ...)."""


class BatchCompositionError(TranAlignError, ValueError):
    """A training batch lacks the structure a loss requires (missing positive/negative, wrong size)."""


class NumericError(TranAlignError, ArithmeticError):
    """A non-finite value appeared where a finite one is required."""


class GradientStateError(TranAlignError, RuntimeError):
    """Gradients were requested before any backward pass recorded them."""


class CheckpointFormatError(TranAlignError, ValueError):
    """A checkpoint file is corrupt, truncated, or has the wrong magic/version."""
