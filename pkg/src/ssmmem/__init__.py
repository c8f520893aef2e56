"""Memory-function analysis and training harness for diagonal linear state-space models."""
from .kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
