"""Exception types shared across the package."""

__all__ = ["ConfigError", "NumericalGateError", "CalibrationError"]


class ConfigError(ValueError):
    """A scenario or CLI configuration is invalid."""


class NumericalGateError(RuntimeError):
    """A numerical validity gate (canonical-structure or physicality check)
    failed, or a computation produced non-finite values."""


class CalibrationError(NumericalGateError):
    """Pump-power calibration failed to converge."""


class MixedStateError(ValueError):
    """The single-mode filtering shortcut was applied to a state that is not
    spectrally pure; the covariance-matrix path must be used instead."""
