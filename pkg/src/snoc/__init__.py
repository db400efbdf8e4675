"""Lossless voxelized point-cloud sequence coding with a per-sequence CNN."""

from .cnn import BASELINE, LIGHT, PRESETS, CnnArchitecture, CnnModel, Stage, TrainingConfig, train
from .codec import (
    BitrateReport,
    BitstreamError,
    CodecConfig,
    CorruptStreamError,
    EncodedSequence,
    bitrate_report,
    decode_frame,
    decode_sequence,
    decode_sequence_frame,
    encode_frame,
    encode_sequence,
)
from .coder import TruncatedStreamError
from .context import ContextHistogramStore, collect_training_set
from .core import PlyError, VoxelPointCloud, load_voxelized_cloud, save_voxelized_cloud

__all__ = [
    "BASELINE",
    "LIGHT",
    "PRESETS",
    "BitrateReport",
    "BitstreamError",
    "CnnArchitecture",
    "CnnModel",
    "CodecConfig",
    "ContextHistogramStore",
    "CorruptStreamError",
    "EncodedSequence",
    "PlyError",
    "Stage",
    "TrainingConfig",
    "TruncatedStreamError",
    "VoxelPointCloud",
    "bitrate_report",
    "collect_training_set",
    "decode_frame",
    "decode_sequence",
    "decode_sequence_frame",
    "encode_frame",
    "encode_sequence",
    "load_voxelized_cloud",
    "save_voxelized_cloud",
    "train",
]
