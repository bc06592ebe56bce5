"""Exception taxonomy shared across the toolkit.

Everything raised on purpose derives from CnnscopeError so callers can
catch library failures without swallowing genuine bugs.
"""


class CnnscopeError(Exception):
    """Base class for all errors raised by cnnscope."""


class ShapeError(CnnscopeError, ValueError):
    """Operand shapes are incompatible; the message names the offending axis."""


class UsageError(CnnscopeError, ValueError):
    """An API was called with arguments that violate its contract."""


class AddressError(CnnscopeError, ValueError):
    """A layer/channel/class address does not exist in the given model."""


class DataFormatError(CnnscopeError, ValueError):
    """An external file does not match its declared format."""


class WeightFileError(DataFormatError):
    """Base class for weight-file problems."""


class WeightMagicError(WeightFileError):
    """The weight file does not start with the expected magic bytes."""


class WeightVersionError(WeightFileError):
    """The weight file declares an unsupported format version."""


class WeightTruncationError(WeightFileError):
    """The weight file ends before a declared tensor is complete."""


class WeightShapeError(WeightFileError):
    """Stored tensors do not match the model spec (wrong shape, missing, or unexpected)."""


class NumericsError(CnnscopeError, RuntimeError):
    """A computation produced non-finite values and was aborted."""


class TrainingDiverged(NumericsError):
    """Training hit a non-finite loss. Carries epoch, batch and lr for diagnosis."""

    def __init__(self, epoch: int, batch: int, lr: float, loss: float):
        self.epoch = epoch
        self.batch = batch
        self.lr = lr
        self.loss = loss
        super().__init__(
            f"non-finite loss {loss!r} at epoch {epoch}, batch {batch} (lr={lr})"
        )


class AscentAborted(NumericsError):
    """Gradient ascent hit a non-finite objective. Carries the trace recorded so far."""

    def __init__(self, message, trace):
        self.trace = trace
        super().__init__(message)
