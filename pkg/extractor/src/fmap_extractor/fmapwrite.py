"""Writer for the `.fmap` binary format (the consumer side is partgraph).

Layout, all integers little-endian:

    magic b"FMAP" | version 0x01
    u32 id_len | UTF-8 image_id
    u32 layer_index | u32 channels | u32 height | u32 width
    u32 image_width_px | u32 image_height_px
    channels*height*width float32, channel-major, row-major
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"FMAP"
VERSION = 1


def write_fmap_file(
    path: str | Path,
    image_id: str,
    layer_index: int,
    values: np.ndarray,
    image_width_px: int,
    image_height_px: int,
) -> None:
    values = np.ascontiguousarray(values, dtype="<f4")
    if values.ndim != 3 or min(values.shape) == 0:
        raise ValueError(f"values must be a non-empty (C, H, W) array, got {values.shape}")
    if not np.all(np.isfinite(values)):
        raise ValueError("non-finite activations")
    ident = image_id.encode("utf-8")
    c, h, w = values.shape
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(bytes([VERSION]))
        fh.write(struct.pack("<I", len(ident)))
        fh.write(ident)
        fh.write(struct.pack("<6I", layer_index, c, h, w,
                             image_width_px, image_height_px))
        fh.write(values.tobytes())
