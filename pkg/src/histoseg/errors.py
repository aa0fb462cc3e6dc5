"""Exception types shared across the package."""


class HistosegError(Exception):
    """Base class for all histoseg errors."""


class ShapeMismatchError(HistosegError):
    """Operands or buffers have incompatible shapes."""


class MalformedPngError(HistosegError):
    """The file is not a decodable PNG."""


class UnsupportedPngError(HistosegError):
    """The PNG is valid but not 8-bit grayscale or RGB."""


class DegenerateImageError(HistosegError):
    """Too few usable pixels, or fewer than two stains present."""


class SingularBasisError(HistosegError):
    """Stain basis columns are linearly dependent."""


class StaleCacheError(HistosegError):
    """Forward cache does not match the model's current parameters."""


class DivergenceError(HistosegError):
    """Training produced a non-finite loss or gradient."""


class ConfigError(HistosegError):
    """Invalid configuration file or manifest."""


class PipelineStageError(HistosegError):
    """Failure inside a named pipeline stage.

    Wraps the underlying error so callers can tell which stage of
    normalize -> patch -> predict -> stitch -> score went wrong.
    """

    def __init__(self, stage, cause):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
