"""Surrogate image codecs: blocky (DCT), latentq (latent quantizer), texgen (generative)."""

from .bitstream import CorruptPayload
from .core import (
    CODEC_NAMES, HEADER_BITS, NUM_CODECS, NUM_LEVELS, CodecCondition, CodecError,
    CompressedArtifact, RawImage, artifact_from_bytes, bits_per_pixel, decode, encode,
    load_artifact, read_png, save_artifact, write_png,
)
from .dct import block_dct8, block_idct8

__all__ = [
    "CODEC_NAMES", "HEADER_BITS", "NUM_CODECS", "NUM_LEVELS", "CodecCondition", "CodecError",
    "CompressedArtifact", "CorruptPayload", "RawImage", "artifact_from_bytes", "bits_per_pixel",
    "block_dct8", "block_idct8", "decode", "encode", "load_artifact", "read_png",
    "save_artifact", "write_png",
]
