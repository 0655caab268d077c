"""SPAD lidar depth imaging: histogram simulation, multi-feature
extraction, classical baselines and the HistNet residual U-Net."""

from .kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
