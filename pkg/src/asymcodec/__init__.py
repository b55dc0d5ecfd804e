"""Asymmetric learned image codec: heavy encoder, light decoder, numpy only."""

from .codec import Bitstream, compress, decompress, encode
from .config import ModelConfig, preset
from .errors import CodecError
from .model import Model, analyze, synthesize

__version__ = "0.1.0"

__all__ = [
    "Bitstream",
    "CodecError",
    "Model",
    "ModelConfig",
    "analyze",
    "compress",
    "decompress",
    "encode",
    "preset",
    "synthesize",
]
