"""Exception types shared across the package."""


class QRangeError(Exception):
    """Base class for package-specific errors."""


class DegenerateRange(QRangeError):
    """theta_max - theta_min too small to support the requested bit width."""


class NonPositiveRange(QRangeError):
    """Symmetric quantization requires theta_max > 0."""


class LengthMismatch(QRangeError):
    """Paired vectors have different lengths."""


class NonFiniteGradient(QRangeError):
    """An accumulated loss or gradient came out NaN or Inf."""


class PolicyMismatch(QRangeError):
    """Learning-rate policy applied to an incompatible parameterization."""
