"""Feature-map container, its binary file format, and grid-to-plane projection.

A `.fmap` file stores one image's activations for one conv-layer.  Layout
(all integers little-endian):

    magic b"FMAP" | version 0x01
    u32 id_len | id_len bytes UTF-8 image_id
    u32 layer_index
    u32 channels | u32 height | u32 width
    u32 image_width_px | u32 image_height_px
    channels*height*width IEEE-754 float32, channel-major, row-major

Positions live on the normalized unit square: a grid unit is projected to
the center of its cell, so positions from layers of different resolution
are directly comparable.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO

import numpy as np

from .errors import ParseError, ValidationError

MAGIC = b"FMAP"
VERSION = 1


@dataclass(frozen=True)
class UnitPosition:
    """Normalized image-plane coordinates, both in [0, 1]."""

    x: float
    y: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=np.float64)


def project_unit(row: int, col: int, height: int, width: int) -> UnitPosition:
    """Project grid unit (row, col) of an height x width grid to its cell center."""
    if height <= 0 or width <= 0:
        raise ValidationError(f"grid dims must be positive, got {height}x{width}")
    if not (0 <= row < height) or not (0 <= col < width):
        raise ValidationError(
            f"unit ({row},{col}) outside grid {height}x{width}"
        )
    return UnitPosition((col + 0.5) / width, (row + 0.5) / height)


def grid_positions(height: int, width: int) -> np.ndarray:
    """Cell-center positions of every unit, shape (height*width, 2), row-major."""
    cols = (np.arange(width, dtype=np.float64) + 0.5) / width
    rows = (np.arange(height, dtype=np.float64) + 0.5) / height
    xx, yy = np.meshgrid(cols, rows)
    return np.stack([xx.ravel(), yy.ravel()], axis=1)


@dataclass
class FeatureMap:
    """Activations of one conv-layer for one image plus projection metadata.

    `values` has shape (channels, height, width), float32.  Read-only after
    construction by convention; nothing here mutates it.
    """

    image_id: str
    layer_index: int
    values: np.ndarray
    image_width_px: int
    image_height_px: int

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim != 3:
            raise ValidationError("values must be a (C, H, W) array")
        c, h, w = self.values.shape
        if min(c, h, w) <= 0:
            raise ValidationError(f"zero dimension in shape {self.values.shape}")
        if self.layer_index < 0:
            raise ValidationError("layer_index must be >= 0")
        if self.image_width_px <= 0 or self.image_height_px <= 0:
            raise ValidationError("image pixel dims must be positive")
        if not np.all(np.isfinite(self.values)):
            raise ValidationError("non-finite values in feature map")

    @property
    def channels(self) -> int:
        return int(self.values.shape[0])

    @property
    def height(self) -> int:
        return int(self.values.shape[1])

    @property
    def width(self) -> int:
        return int(self.values.shape[2])

    def unit_position(self, row: int, col: int) -> UnitPosition:
        return project_unit(row, col, self.height, self.width)


def write_fmap(fmap: FeatureMap, stream: BinaryIO) -> None:
    """Serialize a FeatureMap; the inverse of read_fmap, bit-exact."""
    ident = fmap.image_id.encode("utf-8")
    stream.write(MAGIC)
    stream.write(bytes([VERSION]))
    stream.write(struct.pack("<I", len(ident)))
    stream.write(ident)
    stream.write(
        struct.pack(
            "<6I",
            fmap.layer_index,
            fmap.channels,
            fmap.height,
            fmap.width,
            fmap.image_width_px,
            fmap.image_height_px,
        )
    )
    stream.write(np.ascontiguousarray(fmap.values, dtype="<f4").tobytes())


def read_fmap(stream: BinaryIO) -> FeatureMap:
    """Parse one `.fmap` byte stream, rejecting malformed input loudly."""
    magic = stream.read(4)
    if magic != MAGIC:
        raise ParseError(f"bad magic {magic!r}")
    version = stream.read(1)
    if len(version) != 1:
        raise ParseError("truncated payload: missing version byte")
    if version[0] != VERSION:
        raise ParseError(f"unsupported version {version[0]}")
    raw = stream.read(4)
    if len(raw) != 4:
        raise ParseError("truncated payload: missing id length")
    (id_len,) = struct.unpack("<I", raw)
    ident = stream.read(id_len)
    if len(ident) != id_len:
        raise ParseError("truncated payload: short image id")
    raw = stream.read(24)
    if len(raw) != 24:
        raise ParseError("truncated payload: short header")
    layer, c, h, w, img_w, img_h = struct.unpack("<6I", raw)
    if min(c, h, w) == 0:
        raise ParseError(f"zero dimension in header ({c},{h},{w})")
    if img_w == 0 or img_h == 0:
        raise ParseError("zero image pixel dimension in header")
    count = c * h * w
    payload = stream.read(4 * count)
    if len(payload) != 4 * count:
        raise ParseError(
            f"truncated payload: expected {4 * count} value bytes, got {len(payload)}"
        )
    if stream.read(1):
        raise ParseError("trailing bytes after payload")
    values = np.frombuffer(payload, dtype="<f4").reshape(c, h, w)
    if not np.all(np.isfinite(values)):
        raise ParseError("non-finite values in payload")
    try:
        image_id = ident.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError(f"image id is not valid UTF-8: {exc}") from exc
    return FeatureMap(
        image_id=image_id,
        layer_index=layer,
        values=values.copy(),
        image_width_px=img_w,
        image_height_px=img_h,
    )


def save_fmap(fmap: FeatureMap, path: str | Path) -> None:
    with open(path, "wb") as fh:
        write_fmap(fmap, fh)


def load_fmap(path: str | Path) -> FeatureMap:
    with open(path, "rb") as fh:
        return read_fmap(fh)
