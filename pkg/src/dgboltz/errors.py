"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: configuration problems -> 2,
numerical failures -> 3, I/O and file-format problems -> 4.
"""


class DGBoltzError(Exception):
    """Base class for all package errors."""


class ConfigurationError(DGBoltzError):
    """Invalid parameter, config file entry, or unknown name."""


class SizingError(DGBoltzError):
    """Requested allocation exceeds the configured memory cap."""


class DegenerateFieldError(DGBoltzError):
    """Distribution with non-positive density or temperature."""


class IncompatibleGridError(DGBoltzError):
    """Kernel/field/mesh fingerprints do not match."""


class KernelFormatError(DGBoltzError):
    """Corrupt or unrecognized kernel container file."""


class NumericalConsistencyError(DGBoltzError):
    """Numerical invariant violated (e.g. imaginary residue too large)."""


class DivergenceError(DGBoltzError):
    """Time integration produced non-finite state."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step
