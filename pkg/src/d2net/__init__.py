"""d2net: full-resolution image restoration with Fourier-domain attention.

The network couples features globally through per-patch spectral products
(linear-memory attention), locally through multi-scale depthwise kernels,
and fuses encoder/decoder features through learned softmax gates, predicting
a residual over the input image.  Everything runs on numpy with hand-written
backward passes certified by finite differences.
"""

from .config import BlockConfig, NetworkConfig, toy_config, toy_train_config
from .estimator import D2NetRestorer
from .membench import MemoryLedger, memory_scaling_report
from .metrics import psnr, ssim
from .network import D2Net, count_params, load_checkpoint, save_checkpoint
from .training import DegradationSpec, train_toy

__version__ = "0.1.0"

__all__ = [
    "BlockConfig",
    "D2Net",
    "D2NetRestorer",
    "DegradationSpec",
    "MemoryLedger",
    "NetworkConfig",
    "count_params",
    "load_checkpoint",
    "memory_scaling_report",
    "psnr",
    "save_checkpoint",
    "ssim",
    "toy_config",
    "toy_train_config",
    "train_toy",
    "__version__",
]
