"""Multi-label U-Net segmentation of electroluminescence images, in NumPy."""
from .data import ClassSet, MultiHotMask, SampleRecord
from .unet import UNetConfig, UNetModel, build_unet, forward, predict_probabilities

__all__ = [
    "ClassSet", "MultiHotMask", "SampleRecord",
    "UNetConfig", "UNetModel", "build_unet", "forward", "predict_probabilities",
]
__version__ = "0.1.0"
