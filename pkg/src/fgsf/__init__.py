"""Fisher-guided selective forgetting for soft actor-critic at desk scale."""

from fgsf.backend import NAME as KERNEL_BACKEND

__version__ = "0.1.0"
__all__ = ["KERNEL_BACKEND", "__version__"]
