"""Exception hierarchy shared across the package."""


class Fp8PtqError(Exception):
    pass


class ParameterError(Fp8PtqError, ValueError):
    """Shape, axis or quantization-parameter mismatch."""


class CalibrationError(Fp8PtqError, ValueError):
    """Missing or non-finite calibration data."""


class ContainerError(Fp8PtqError):
    """Malformed model/dataset container file."""


class BadMagicError(ContainerError):
    pass


class TruncatedPayloadError(ContainerError):
    pass


class UnknownLayerKindError(ContainerError):
    pass


class DanglingTensorError(ContainerError):
    pass


class NonFiniteError(CalibrationError):
    """A NaN or infinity showed up where only finite values are allowed."""
