"""RAHT point-cloud attribute codec with rate-distortion optimized skipping of the last transform layers."""

__version__ = "0.1.0"

from .bitstream import (  # noqa: E402
    EncoderConfig,
    EncodeStats,
    decode_frame,
    decode_sequence,
    encode_frame,
    encode_sequence,
)
from .cloud_io import RawCloud, VoxelCloud, parse_ply, read_cloud, voxelize, write_ply  # noqa: E402
from .metrics import RdPoint, bd_rate, bdbr_total, complexity_ratio, layer_stats, psnr  # noqa: E402
from .raht import forward_raht, inverse_raht  # noqa: E402

__all__ = [
    "EncoderConfig", "EncodeStats", "encode_frame", "decode_frame", "encode_sequence", "decode_sequence",
    "RawCloud", "VoxelCloud", "parse_ply", "read_cloud", "voxelize", "write_ply",
    "RdPoint", "bd_rate", "bdbr_total", "complexity_ratio", "layer_stats", "psnr",
    "forward_raht", "inverse_raht",
]
