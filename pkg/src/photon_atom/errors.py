"""Exception types shared across the package."""


class PhotonAtomError(Exception):
    """Base class for package-specific errors."""


class ConfigError(PhotonAtomError):
    """Malformed or incomplete configuration input."""


class DataFormatError(PhotonAtomError, ValueError):
    """Malformed data files or incompatible grids/binnings."""


class StepSizeError(PhotonAtomError, ValueError):
    """Integration step too coarse for the requested accuracy."""


class FitError(PhotonAtomError, RuntimeError):
    """Nonlinear fit failed to converge or produced an unphysical result."""
