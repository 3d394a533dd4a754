"""Telemedicine photo quality assessment: hand-crafted vision features,
classical per-reason classifiers, a calibrated gated ensemble, evaluation
statistics, and a capture-session service."""

from .ensemble import QualityModel, Verdict, assess, load_model, save_model
from .errors import PhotoqcError
from .imagekit import RasterImage, decode_image, resize_max_side

__version__ = "0.1.0"

__all__ = ["PhotoqcError", "QualityModel", "RasterImage", "Verdict", "assess",
           "decode_image", "load_model", "resize_max_side", "save_model",
           "__version__"]
