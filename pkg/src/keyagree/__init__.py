"""Secret-key agreement over a state-dependent 3-receiver broadcast channel."""
from .kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
