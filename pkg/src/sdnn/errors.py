"""Exception hierarchy shared by every sdnn module."""


class SdnnError(Exception):
    """Base class; ``code`` is the machine-readable tag printed by the CLI."""

    code = "SdnnError"

    def __init_subclass__(cls, **kwargs):
        super().__init_subclass__(**kwargs)
        cls.code = cls.__name__


class ShapeMismatch(SdnnError, ValueError):
    pass


class UnsupportedDerivative(SdnnError, ValueError):
    pass


class TapeMismatch(SdnnError, ValueError):
    pass


class BadWidths(SdnnError, ValueError):
    pass


class IoError(SdnnError, OSError):
    pass


class VersionMismatch(SdnnError, ValueError):
    pass


class CorruptChecksum(SdnnError, ValueError):
    pass


class LengthMismatch(SdnnError, ValueError):
    pass


class ZeroReference(SdnnError, ValueError):
    pass


class BadBox(SdnnError, ValueError):
    pass


class BadStep(SdnnError, ValueError):
    pass


class PoolTooSmall(SdnnError, ValueError):
    pass


class EmptyData(SdnnError, ValueError):
    pass


class DomainViolation(SdnnError, ValueError):
    pass


class ConvergenceFailure(SdnnError, RuntimeError):
    pass


class NonFiniteIntermediate(SdnnError, FloatingPointError):
    pass


class BadLength(SdnnError, ValueError):
    pass


class UnstableBlowup(SdnnError, FloatingPointError):
    pass


class NanLoss(SdnnError, FloatingPointError):
    def __init__(self, epoch, message=None):
        self.epoch = epoch
        super().__init__(message or f"non-finite loss at epoch {epoch}")


class MissingReference(SdnnError, LookupError):
    pass


class BudgetExceeded(SdnnError, RuntimeError):
    pass


class ConfigMismatch(SdnnError, ValueError):
    pass


class ConfigError(SdnnError, ValueError):
    pass
