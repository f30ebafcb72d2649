"""Classical biomedical image analysis toolkit."""

from .errors import AlgorithmError, ConfigError, ImageIOError, MedimError

__version__ = "0.1.0"

__all__ = ["AlgorithmError", "ConfigError", "ImageIOError", "MedimError", "__version__"]
