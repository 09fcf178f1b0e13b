"""Exception hierarchy shared across the engine."""


class NeedleError(Exception):
    """Base class for all engine errors."""


class DecodeError(NeedleError):
    """Raster bytes could not be decoded into an image."""


class MismatchError(NeedleError, ValueError):
    """Vectors from different embedders or with different dims were combined."""


class NormalizationError(NeedleError, ValueError):
    """Zero-norm input cannot be normalized."""


class AdapterError(NeedleError):
    """An embedder/generator adapter failed or broke its protocol."""

    def __init__(self, message: str, adapter_id: str = ""):
        super().__init__(f"[{adapter_id}] {message}" if adapter_id else message)
        self.adapter_id = adapter_id


class GenerationError(AdapterError):
    """Guide generation failed."""


class RefinementError(NeedleError, ValueError):
    """Query refinement produced an empty prompt."""


class StoreFormatError(NeedleError):
    """Vector store file is corrupt or has an unknown magic/version."""


class ConfigError(NeedleError):
    """Invalid or incomplete engine configuration."""


class ValidationError(NeedleError, ValueError):
    """Request payload references ids outside the allowed set."""


class CodecError(NeedleError):
    """Synthetic raster payload missing or corrupt."""
