"""Monte Carlo Feynman-Kac solver for parabolic equations driven by fractional noise on bounded domains."""

__version__ = "0.1.0"

from .errors import FKError, ValidationError  # noqa: E402
from .kernels import BACKEND  # noqa: E402

__all__ = ["__version__", "FKError", "ValidationError", "BACKEND"]
