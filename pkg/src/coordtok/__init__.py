"""Quantized coordinate tokens for detection-style sequence outputs.

Submodules: :mod:`codec`, :mod:`seqfmt`, :mod:`geometry`, :mod:`rewards`,
:mod:`grpo`, :mod:`metrics`, :mod:`diagnostics`, :mod:`io` and the synthetic
training world in :mod:`coordtok.toy`.
"""
from .codec import ImageExtent, dequantize, quantize
from .seqfmt import PayloadKind, PredictionRecord, parse, serialize, serialize_text

__version__ = "0.1.0"

__all__ = ["ImageExtent", "PayloadKind", "PredictionRecord", "dequantize", "parse", "quantize",
           "serialize", "serialize_text"]
