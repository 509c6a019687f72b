"""Feature-diversity measurement and multi-criterion feature ensembles for OOD detection."""
from ._kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
