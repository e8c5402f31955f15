"""Channel-aware time-domain speech separation, self-contained on numpy."""

__version__ = "0.1.0"

from .tensor import Tensor, no_grad

__all__ = ["Tensor", "no_grad", "__version__"]
