"""Exception hierarchy shared across the package."""


class FramesearchError(Exception):
    """Base class for package errors."""


class ShapeError(FramesearchError, ValueError):
    pass


class DataError(FramesearchError):
    """Bad or missing input data (images, manifests, index files)."""


class ImageDecodeError(DataError):
    pass


class ManifestError(DataError):
    pass


class IndexFormatError(DataError):
    pass


class BadMagicError(IndexFormatError):
    pass


class UnsupportedVersionError(IndexFormatError):
    pass


class TruncatedPayloadError(IndexFormatError):
    pass


class ChecksumMismatchError(DataError):
    """An index was produced by a different model than the one supplied."""


class NonFiniteError(FramesearchError, FloatingPointError, ValueError):
    """NaN or infinity where a finite value is required."""


class TrainingDivergedError(FramesearchError, FloatingPointError):
    def __init__(self, epoch, loss, detail=None):
        msg = f"training diverged at epoch {epoch} (loss={loss})"
        super().__init__(f"{msg}: {detail}" if detail else msg)
        self.epoch = epoch
        self.loss = loss
