"""Quantitative evaluation and raster emitters.

Location instability measures how much a pattern's distance to each
ground-truth landmark (normalized by the image diagonal, pixel space)
varies across its top-scoring images; lower means the pattern sticks to one
part.  The raw-filter-peak baseline treats every channel's strongest unit
as a pattern detector.  Heatmaps sum score-weighted Gaussians over the
raster and are written as binary P5 graymaps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import MetricError, ValidationError
from .fmap import FeatureMap, project_unit
from .inference import top_k_energy
from .mixture import gauss2d


@dataclass
class InstabilityReport:
    node: str
    per_landmark: dict[str, float]  # landmark name -> sqrt(var d_I)
    combined: float                 # arithmetic mean over landmarks
    images_used: list[str]


def normalized_distance(
    predicted: np.ndarray, truth: np.ndarray, image_width_px: int, image_height_px: int
) -> float:
    """Euclidean pixel distance over the image diagonal."""
    if image_width_px <= 0 or image_height_px <= 0:
        raise ValidationError("image pixel dims must be positive")
    dx = (float(predicted[0]) - float(truth[0])) * image_width_px
    dy = (float(predicted[1]) - float(truth[1])) * image_height_px
    return math.hypot(dx, dy) / math.hypot(image_width_px, image_height_px)


def location_instability(
    assignments: Mapping[str, tuple[np.ndarray | None, float]],
    landmarks: Mapping[str, Mapping[str, np.ndarray]],
    image_dims: Mapping[str, tuple[int, int]],
    top_n_images: int = 20,
    node_label: str = "",
) -> InstabilityReport:
    """Mean over landmarks of the deviation of diagonal-normalized distances.

    Uses the node's top `top_n_images` by score among images that have both
    an assignment and landmarks; population variance.
    """
    usable = [
        (image_id, entry)
        for image_id, entry in assignments.items()
        if entry[0] is not None and image_id in landmarks
    ]
    if len(usable) < 2:
        raise MetricError(
            f"node {node_label or '?'}: need at least 2 assigned images, "
            f"have {len(usable)}"
        )
    ranked = sorted(usable, key=lambda item: (-item[1][1], item[0]))
    chosen = ranked[:top_n_images]
    if len(chosen) < 2:
        raise MetricError(f"node {node_label or '?'}: top-image cut left < 2 images")
    names = sorted({name for _, marks in landmarks.items() for name in marks})
    per_landmark: dict[str, float] = {}
    for name in names:
        distances = []
        for image_id, (position, _) in chosen:
            marks = landmarks[image_id]
            if name not in marks:
                continue
            width, height = image_dims[image_id]
            distances.append(
                normalized_distance(position, marks[name], width, height)
            )
        if len(distances) < 2:
            raise MetricError(
                f"node {node_label or '?'}: landmark {name!r} present on < 2 "
                "of the selected images"
            )
        per_landmark[name] = float(np.sqrt(np.var(distances)))
    combined = float(np.mean(list(per_landmark.values())))
    return InstabilityReport(
        node=node_label,
        per_landmark=per_landmark,
        combined=combined,
        images_used=[image_id for image_id, _ in chosen],
    )


def raw_filter_peak_baseline(
    fmaps: Mapping[str, FeatureMap],
) -> dict[int, dict[str, tuple[np.ndarray | None, float]]]:
    """Strongest post-ReLU unit per channel per image; the Table-1 baseline.

    Returns {channel: {image_id: (position | None, peak_response)}}; an
    all-zero channel yields (None, 0.0).
    """
    out: dict[int, dict[str, tuple[np.ndarray | None, float]]] = {}
    for image_id in sorted(fmaps):
        fmap = fmaps[image_id]
        values = np.maximum(fmap.values, 0.0)
        for d in range(fmap.channels):
            grid = values[d]
            peak = float(grid.max())
            channel = out.setdefault(d, {})
            if peak <= 0.0:
                channel[image_id] = (None, 0.0)
                continue
            row, col = np.unravel_index(int(np.argmax(grid)), grid.shape)
            p = project_unit(int(row), int(col), fmap.height, fmap.width)
            channel[image_id] = (p.as_array(), peak)
    return out


# ---------------------------------------------------------------------------
# heatmaps


def render_heatmap(
    assignments: Sequence[tuple[np.ndarray | None, float, float]],
    raster_height: int,
    raster_width: int,
    top_fraction: float = 0.5,
) -> np.ndarray:
    """Sum of score-weighted Gaussians for the top-scoring patterns.

    `assignments` holds (position, score, sigma2) per pattern.  The top
    `top_fraction` of assigned patterns by score contribute; the float
    field is rescaled to 0..255 afterwards by render_heatmap_u8.
    """
    if raster_height <= 0 or raster_width <= 0:
        raise ValidationError("raster dims must be positive")
    live = [(p, s, v) for p, s, v in assignments if p is not None and s > 0]
    live.sort(key=lambda item: -item[1])
    keep = live[: math.ceil(len(live) * top_fraction)] if live else []
    canvas = np.zeros((raster_height, raster_width))
    if not keep:
        return canvas
    xs = (np.arange(raster_width) + 0.5) / raster_width
    ys = (np.arange(raster_height) + 0.5) / raster_height
    xx, yy = np.meshgrid(xs, ys)
    pts = np.stack([xx.ravel(), yy.ravel()], axis=1)
    for position, score, sigma2 in keep:
        canvas += (score * gauss2d(pts, position, sigma2)).reshape(
            raster_height, raster_width
        )
    return canvas


def render_heatmap_u8(canvas: np.ndarray) -> np.ndarray:
    peak = canvas.max()
    if peak <= 0:
        return np.zeros(canvas.shape, dtype=np.uint8)
    return np.clip(np.rint(canvas * (255.0 / peak)), 0, 255).astype(np.uint8)


def write_pgm(raster: np.ndarray, path: str | Path) -> None:
    """Binary P5 portable graymap, one byte per pixel."""
    raster = np.asarray(raster, dtype=np.uint8)
    height, width = raster.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{width} {height}\n255\n".encode("ascii"))
        fh.write(raster.tobytes())


def read_pgm(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    header, _, rest = data.partition(b"255\n")
    tokens = header.split()
    if tokens[0] != b"P5":
        raise ValidationError("not a binary P5 graymap")
    width, height = int(tokens[1]), int(tokens[2])
    return np.frombuffer(rest, dtype=np.uint8, count=width * height).reshape(
        height, width
    )


# ---------------------------------------------------------------------------
# patches


def top_patches(
    assignments: Mapping[str, tuple[np.ndarray | None, float]],
    image_dims: Mapping[str, tuple[int, int]],
    fraction: float = 0.3,
    patch_px: int = 70,
) -> list[tuple[str, tuple[int, int, int, int]]]:
    """Top-energy images with a patch_px box centered on the pattern.

    Boxes are [x0, x1) x [y0, y1) in pixels, shifted (not shrunk) to stay
    inside the image whenever it is large enough.
    """
    scores = [
        (image_id, entry[1])
        for image_id, entry in assignments.items()
        if entry[0] is not None
    ]
    _, chosen = top_k_energy(scores, fraction)
    out = []
    for image_id in chosen:
        position, _ = assignments[image_id]
        width, height = image_dims[image_id]
        cx = int(round(float(position[0]) * width))
        cy = int(round(float(position[1]) * height))
        half = patch_px // 2
        x0, y0 = cx - half, cy - half
        x0 = min(max(x0, 0), max(width - patch_px, 0))
        y0 = min(max(y0, 0), max(height - patch_px, 0))
        x1 = min(x0 + patch_px, width)
        y1 = min(y0 + patch_px, height)
        out.append((image_id, (x0, y0, x1, y1)))
    return out
