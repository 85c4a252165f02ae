"""Framework-free AWNet: a wavelet U-Net learned ISP mapping RAW or demosaiced
input to RGB, with its autograd engine, losses, data pipeline, trainer and
self-ensemble inference."""

from .network import AWNet, ModelConfig, MultiScaleOutput, build_model, forward_demosaiced, forward_raw
from .wavelet import SubbandSet, dwt2, idwt2

__version__ = "0.1.0"

__all__ = [
    "AWNet",
    "ModelConfig",
    "MultiScaleOutput",
    "SubbandSet",
    "build_model",
    "dwt2",
    "forward_demosaiced",
    "forward_raw",
    "idwt2",
]
