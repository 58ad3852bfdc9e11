"""Exception types shared across the package.

Data-layer errors derive from :class:`RfdroneError` so the CLI can map them
to a single exit code. Plain file-system failures are left as ``OSError``.
"""


class RfdroneError(Exception):
    """Base class for all domain errors raised by this package."""


class InvalidBui(RfdroneError, ValueError):
    """BUI string is malformed or names a class absent from the catalog."""


class ParseError(RfdroneError, ValueError):
    """A segment file contained a non-numeric token or no data at all."""


class LengthMismatch(RfdroneError, ValueError):
    """Band lengths differ beyond what truncation is allowed to absorb."""


class RateMismatch(RfdroneError, ValueError):
    """Two segments carry different sample rates."""


class MissingSourceClass(RfdroneError, LookupError):
    """A manifest lacks the on-and-connected sources a mix needs."""


class NoEntries(RfdroneError, ValueError):
    """A dataset scan matched nothing."""


class InvalidLength(RfdroneError, ValueError):
    """Window length too short to define the taper."""


class NotPowerOfTwo(RfdroneError, ValueError):
    """Transform size is not a power of two."""


class SignalTooShort(RfdroneError, ValueError):
    """Band has fewer samples than the framing requires."""


class FrameCountMismatch(RfdroneError, ValueError):
    """Framing config does not yield the map's fixed frame count."""


class ShapeMismatch(RfdroneError, ValueError):
    """Array shapes are inconsistent with the operation's contract."""


class BatchTooSmall(RfdroneError, ValueError):
    """Batch statistics need at least two samples."""


class NoForwardCache(RfdroneError, RuntimeError):
    """backward() called before forward() populated the cache."""


class InvalidLabel(RfdroneError, ValueError):
    """Class label outside [0, num_classes)."""


class InvalidSpec(RfdroneError, ValueError):
    """Model specification violates an architectural constraint."""


class ClassTooSmall(RfdroneError, ValueError):
    """Stratified splitting needs at least three samples per class."""


class EmptyTrainSet(RfdroneError, ValueError):
    """No full training batch can be formed."""


class EmptyTestSet(RfdroneError, ValueError):
    """Evaluation requires a non-empty test set."""


class DivergedLoss(RfdroneError, ArithmeticError):
    """Training loss became NaN or infinite."""


class LengthTooShort(RfdroneError, ValueError):
    """Requested segment length below the generator's minimum."""
