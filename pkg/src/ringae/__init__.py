"""Self-supervised recovery of structured image sets with a tensor-ring
factorized convolutional autoencoder."""

from ._kernels import BACKEND as KERNEL_BACKEND

__version__ = "0.1.0"

__all__ = ["KERNEL_BACKEND", "__version__"]
