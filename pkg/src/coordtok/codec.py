"""Quantized coordinate codec.

Continuous pixel coordinates are mapped to 1000 relative bins ``0..999`` and
each bin to one token id in the last 1000 slots of a vocabulary.
"""
from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

NUM_BINS = 1000

_COORD_RE = re.compile(r"<(\d{1,3})>")


class InvalidInput(ValueError):
    pass


class NotACoordinate(ValueError):
    """Raised when a token id or surface string is not a coordinate token."""


@dataclass(frozen=True)
class VocabMap:
    vocab_size: int

    def __post_init__(self):
        if self.vocab_size < NUM_BINS:
            raise InvalidInput(f"vocab_size must be >= {NUM_BINS}, got {self.vocab_size}")

    @property
    def coord_base(self) -> int:
        return self.vocab_size - NUM_BINS

    def is_coordinate(self, token_id: int) -> bool:
        return self.coord_base <= token_id < self.vocab_size


@dataclass(frozen=True)
class ImageExtent:
    width: float
    height: float

    def __post_init__(self):
        if not (self.width > 0 and self.height > 0):
            raise InvalidInput(f"extent must be strictly positive, got {self.width}x{self.height}")


def _check_extent(extent):
    if not np.all(np.isfinite(extent)) or np.any(np.asarray(extent) <= 0):
        raise InvalidInput(f"extent must be finite and > 0, got {extent!r}")


def quantize(x, extent):
    """Map pixel coordinate(s) to bin(s): ``clamp(floor(x / extent * 1000), 0, 999)``.

    Works on scalars (returns ``int``) and arrays (returns ``int64`` array).
    """
    _check_extent(extent)
    xa = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(xa)):
        raise InvalidInput("coordinate must be finite")
    b = np.clip(np.floor(xa / extent * NUM_BINS), 0, NUM_BINS - 1).astype(np.int64)
    if b.ndim == 0:
        return int(b)
    return b


def dequantize(b, extent):
    """Bin center in pixels: ``(b + 0.5) * extent / 1000``."""
    ba = np.asarray(b)
    if np.any(ba < 0) or np.any(ba >= NUM_BINS):
        raise InvalidInput(f"bin out of range: {b!r}")
    out = (ba + 0.5) * extent / NUM_BINS
    if out.ndim == 0:
        return float(out)
    return out


def bin_to_token(b: int, vmap: VocabMap) -> int:
    if not 0 <= b < NUM_BINS:
        raise InvalidInput(f"bin out of range: {b}")
    return vmap.coord_base + int(b)


def token_to_bin(token_id: int, vmap: VocabMap) -> int:
    if not vmap.is_coordinate(token_id):
        raise NotACoordinate(f"token {token_id} outside [{vmap.coord_base}, {vmap.vocab_size})")
    return int(token_id) - vmap.coord_base


def bin_to_text(b: int) -> str:
    if not 0 <= b < NUM_BINS:
        raise InvalidInput(f"bin out of range: {b}")
    return f"<{int(b)}>"


def text_to_bin(s: str) -> int:
    """Parse a ``<N>`` surface form.  Anything else raises :class:`NotACoordinate`."""
    m = _COORD_RE.fullmatch(s)
    if m is None:
        raise NotACoordinate(s)
    v = int(m.group(1))
    if v >= NUM_BINS or (len(m.group(1)) > 1 and m.group(1)[0] == "0"):
        raise NotACoordinate(s)
    return v


def is_coord_text(s: str) -> bool:
    try:
        text_to_bin(s)
    except NotACoordinate:
        return False
    return True


def quantize_box(box, extent: ImageExtent):
    """Quantize an ``(x0, y0, x1, y1)`` pixel box per axis."""
    x0, y0, x1, y1 = box
    return (quantize(x0, extent.width), quantize(y0, extent.height),
            quantize(x1, extent.width), quantize(y1, extent.height))


def dequantize_box(bins, extent: ImageExtent):
    x0, y0, x1, y1 = bins
    return (dequantize(x0, extent.width), dequantize(y0, extent.height),
            dequantize(x1, extent.width), dequantize(y1, extent.height))


def max_roundtrip_error(extent: float) -> float:
    return extent / (2 * NUM_BINS)


__all__ = [
    "NUM_BINS", "InvalidInput", "NotACoordinate", "VocabMap", "ImageExtent",
    "quantize", "dequantize", "bin_to_token", "token_to_bin", "bin_to_text",
    "text_to_bin", "is_coord_text", "quantize_box", "dequantize_box",
    "max_roundtrip_error",
]
