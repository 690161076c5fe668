"""Codec-conditioned vision encoder lab: surrogate codecs, RoPE encoder, distillation, BD/gap analysis."""

__version__ = "0.1.0"
