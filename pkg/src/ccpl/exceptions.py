"""Exception types raised across the package."""


class CcplError(Exception):
    """Base class for all package-specific errors."""


class DimensionMismatchError(CcplError, ValueError):
    """Two arrays that must share a shape (or feature dim) do not."""


class SingularMatrixError(CcplError, ValueError):
    """Stain matrix is singular or too ill-conditioned to invert."""


class ConfigMismatchError(CcplError, ValueError):
    """Channel statistics were computed under incompatible configurations."""


class DimensionTooSmallError(CcplError, ValueError):
    """Image is too small for the requested block partition."""


class ImageTooSmallError(CcplError, ValueError):
    """Image is smaller than the SSIM window."""


class ZeroVarianceError(CcplError, ValueError):
    """Pearson correlation is undefined for a constant image."""


class TooFewSamplesError(CcplError, ValueError):
    """Frechet distance needs at least two samples per feature set."""


class BadMagicError(CcplError, ValueError):
    """Feature file does not start with the expected magic bytes."""


class TruncatedFileError(CcplError, ValueError):
    """Feature file payload size does not match its header."""


class ManifestMismatchError(CcplError, ValueError):
    """Feature manifest is missing or inconsistent with the binary file."""


class EmptyPairsError(CcplError, ValueError):
    """No image pairs were supplied to the objective."""


class NoPairsFoundError(CcplError, ValueError):
    """Directory matching produced no pairs."""


class InputFormatError(CcplError, ValueError):
    """Input file is not an 8-bit RGB PNG."""
