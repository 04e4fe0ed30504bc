"""Exception hierarchy shared across the package."""


class DualTrainError(Exception):
    """Base class for all errors raised by dualtrain."""


class ShapeError(DualTrainError, ValueError):
    pass


class ConfigError(DualTrainError, ValueError):
    pass


class UsageError(DualTrainError, RuntimeError):
    pass


class RegistrationError(DualTrainError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else ""


class CheckpointError(DualTrainError, ValueError):
    def __init__(self, message, offenders=()):
        super().__init__(message)
        self.offenders = list(offenders)


class MappingError(DualTrainError, ValueError):
    def __init__(self, message, names=()):
        super().__init__(message)
        self.names = list(names)


class IntegrityError(DualTrainError, RuntimeError):
    pass


class NonFiniteError(DualTrainError, FloatingPointError):
    pass


class IngestionError(DualTrainError, IOError):
    def __init__(self, message, path=None, offset=None):
        super().__init__(message)
        self.path = path
        self.offset = offset
