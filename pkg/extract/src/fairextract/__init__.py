"""Offline feature extraction into fairadapt embedding datasets."""

from .augment import STRONG_POLICY, center_crop, random_crop, sample_crop_box, strong_augment
from .encoders import ClipEncoder, ModelLoadError, SyntheticEncoder, resolve_encoder
from .extract import ExtractionError, encode_descriptions, extract_dataset
from .spec import ExtractSpec, load_class_names, load_descriptions, load_listing

__version__ = "0.1.0"

__all__ = [
    "STRONG_POLICY",
    "ClipEncoder",
    "ExtractSpec",
    "ExtractionError",
    "ModelLoadError",
    "SyntheticEncoder",
    "center_crop",
    "encode_descriptions",
    "extract_dataset",
    "load_class_names",
    "load_descriptions",
    "load_listing",
    "random_crop",
    "resolve_encoder",
    "sample_crop_box",
    "strong_augment",
]
