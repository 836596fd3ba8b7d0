"""MixUp, MixUp++, LatentMixUp(++) and pseudo-label MixUp for time-series transformers."""

__version__ = "0.1.0"

from .kernels import BACKEND as KERNEL_BACKEND  # noqa: E402
from .tensor import Tensor, backward, finite_diff_grad, no_grad  # noqa: E402

__all__ = ["KERNEL_BACKEND", "Tensor", "backward", "finite_diff_grad", "no_grad", "__version__"]
