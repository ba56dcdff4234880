"""Progressive token-length multi-scale encoder with an analytical MAC model."""

from .analysis import RedundancyProfile, pyramid_profiles, redundancy_profile
from .costmodel import CostDims, FlopsReport, compare, macs_baseline, macs_deformable_layer, macs_encoder, plan
from .encoder import (
    EncoderConfig,
    EncoderOutput,
    EncoderParams,
    LightPixelEmbedding,
    deformable_layer,
    flat_encode,
    init_encoder_params,
    lpe,
    proscale_encode,
    trc,
    update_counts,
)
from .errors import DimensionError, NumericError, ProscaleError, TensorFormatError, ValidationError
from .numerics import GradCheckReport, Tensor, finite_diff_check
from .pyramid import TokenCounts, TokenPyramid, build_pyramid, smooth_pyramid, token_counts
from .tensorfile import read_tensor, write_tensor

__version__ = "0.1.0"

__all__ = [
    "CostDims", "DimensionError", "EncoderConfig", "EncoderOutput", "EncoderParams", "FlopsReport",
    "GradCheckReport", "LightPixelEmbedding", "NumericError", "ProscaleError", "RedundancyProfile",
    "Tensor", "TensorFormatError", "TokenCounts", "TokenPyramid", "ValidationError", "build_pyramid",
    "compare", "deformable_layer", "finite_diff_check", "flat_encode", "init_encoder_params", "lpe",
    "macs_baseline", "macs_deformable_layer", "macs_encoder", "plan", "proscale_encode",
    "pyramid_profiles", "read_tensor", "redundancy_profile", "smooth_pyramid", "token_counts", "trc",
    "update_counts", "write_tensor",
]
