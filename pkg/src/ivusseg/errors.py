"""Exception hierarchy. The CLI maps any ``IvusSegError`` to exit code 1."""


class IvusSegError(Exception):
    pass


class ManifestError(IvusSegError):
    """A manifest or a file it references could not be loaded."""


class ValidationError(IvusSegError, ValueError):
    """Input data violates a documented invariant."""


class PhantomSpecError(ValidationError):
    pass


class ModelConfigError(ValidationError):
    pass


class CheckpointError(IvusSegError):
    pass


class TrainingError(IvusSegError):
    pass


class DegenerateInputError(IvusSegError, ValueError):
    """Raised by Otsu thresholding when the histogram has a single occupied bin."""


class EmptyRegionError(IvusSegError, ValueError):
    pass


class MeasurementError(IvusSegError, ValueError):
    pass


class ContainmentError(MeasurementError):
    """Lumen mask is not contained in the media-adventitia mask."""


class UndefinedCorrelationError(IvusSegError, ValueError):
    pass
