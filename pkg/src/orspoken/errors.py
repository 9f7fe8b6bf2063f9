"""Exception hierarchy.

``ValidationError`` subclasses describe bad input (CLI exit code 2);
``RuntimeFailure`` subclasses describe failures while running (exit code 3).
"""


class OrspokenError(Exception):
    pass


class ValidationError(OrspokenError, ValueError):
    pass


class RuntimeFailure(OrspokenError, RuntimeError):
    pass


class ManifestError(ValidationError):
    """Malformed manifest/detections line or a violated record invariant."""

    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {message}" if where else message)


class FeatureError(ValidationError):
    pass


class DimensionError(ValidationError):
    pass


class WavFormatError(ValidationError):
    pass


class AudioError(ValidationError):
    pass


class AdapterError(RuntimeFailure):
    """Transport failure talking to an ASR service; callers may retry."""

    retryable = True


class UnrecognizableAudioError(RuntimeFailure):
    pass


class DivergenceError(RuntimeFailure):
    def __init__(self, epoch, loss):
        self.epoch = epoch
        self.loss = loss
        super().__init__(f"non-finite training loss {loss!r} at epoch {epoch}")
