"""FAWN: Wi-Fi and 5G CSI fusion for indoor presence and grid localisation."""

from .data import CsiSample, SceneLabel
from .model import SceneEstimate, fawn_forward, init_params

__version__ = "0.1.0"

__all__ = ["CsiSample", "SceneEstimate", "SceneLabel", "fawn_forward", "init_params"]
