"""Exception types shared across the pipeline."""


class EcgError(Exception):
    """Base class for all package errors."""


class RecordFormatError(EcgError, ValueError):
    """Header or signal bytes do not describe a supported record."""


class ManifestError(EcgError, ValueError):
    pass


class UnknownLabel(ManifestError):
    pass


class DuplicateRecord(ManifestError):
    pass


class NyquistNotch(EcgError, ValueError):
    """Notch frequency at or above Nyquist; a biquad notch is undefined there."""


class SignalTooShort(EcgError, ValueError):
    pass


class EmptyRecord(EcgError, ValueError):
    """No beat survived segmentation."""


class NumericalFault(EcgError, ArithmeticError):
    def __init__(self, message, layer=None, step=None):
        super().__init__(message)
        self.layer = layer
        self.step = step


class UndefinedSimilarity(EcgError, ValueError):
    pass


class ConfigError(EcgError, ValueError):
    pass


class ConfigHashMismatch(ConfigError):
    pass
