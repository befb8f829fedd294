"""Exception hierarchy shared across the engine."""


class FaceReactError(Exception):
    """Base class for all engine errors."""


class DimensionError(FaceReactError, ValueError):
    """Keypoint count / frame count / vector length mismatch."""


class FitError(FaceReactError, ValueError):
    """Model fitting rejected its training input."""


class DegenerateDataError(FitError):
    """Training data has zero variance; no expression space exists."""


class TrainingError(FaceReactError, RuntimeError):
    """Optimization diverged (non-finite loss)."""

    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch


class EmptyIndexError(FaceReactError, ValueError):
    """Retrieval index has no entries."""


class DatasetError(FaceReactError, ValueError):
    """Dataset scanning / splitting failed."""


class ArtifactFormatError(FaceReactError, ValueError):
    """A model/index/manifest file is malformed or has the wrong magic."""


class ClassifierError(FaceReactError):
    """Remote classifier transport or response failure."""


class LabelParseError(ClassifierError):
    """Classifier answered, but per-frame labels could not be extracted."""


class ProtocolError(FaceReactError):
    """Wire protocol violation on a live session."""

    def __init__(self, code, detail):
        super().__init__(f"{code}: {detail}")
        self.code = code
        self.detail = detail
