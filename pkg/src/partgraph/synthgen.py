"""Deterministic synthetic feature maps with planted ground truth.

Each image places every part at anchor + a shared object translation + a
per-part jitter (both Gaussians truncated at 3 sigma so planted positions
stay inside the unit square), renders an isotropic bump into the part's
channel at every layer, and sprinkles distractor bumps.  Truth is generated
first; maps are rendered from it, so the two agree exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import permutations
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import InputError, ValidationError
from .fmap import FeatureMap, grid_positions
from .graph import ExplanatoryGraph, NodeId
from .inference import InferenceResult
from .textio import dump_yaml, expect_schema, load_yaml_text

SPEC_SCHEMA = "partgraph-synthspec/1"
TRUTH_SCHEMA = "partgraph-truth/1"
LANDMARKS_SCHEMA = "partgraph-landmarks/1"


@dataclass
class LayerShape:
    channels: int
    height: int
    width: int


@dataclass
class PartSpec:
    name: str
    anchor: np.ndarray                 # (2,) normalized
    channels: list[int]                # one channel per layer, bottom..top
    offsets: np.ndarray                # (n_layers, 2) added to the base position

    def __post_init__(self) -> None:
        self.anchor = np.asarray(self.anchor, dtype=np.float64).reshape(2)
        self.offsets = np.asarray(self.offsets, dtype=np.float64).reshape(-1, 2)


@dataclass
class SynthSpec:
    layers: list[LayerShape]
    images: int
    parts: list[PartSpec]
    sigma_pose: float = 0.05
    sigma_part: float = 0.01
    distractors: int = 2               # per image per layer
    distractor_amplitude: float = 0.4
    bump_width_cells: float = 1.0
    image_width_px: int = 224
    image_height_px: int = 224
    seed: int = 0

    def validate(self) -> None:
        if not self.layers:
            raise ValidationError("at least one layer required")
        if self.images <= 0:
            raise ValidationError("images must be positive")
        if self.sigma_pose < 0 or self.sigma_part < 0:
            raise ValidationError("jitter sigmas must be non-negative")
        if self.distractors < 0 or self.distractor_amplitude < 0:
            raise ValidationError("distractor settings must be non-negative")
        if self.bump_width_cells <= 0:
            raise ValidationError("bump width must be positive")
        margin = 3.0 * (self.sigma_pose + self.sigma_part)
        for part in self.parts:
            if len(part.channels) != len(self.layers) or len(part.offsets) != len(
                self.layers
            ):
                raise ValidationError(
                    f"part {part.name!r} needs one channel and offset per layer"
                )
            for li, shape in enumerate(self.layers):
                if not (0 <= part.channels[li] < shape.channels):
                    raise ValidationError(
                        f"part {part.name!r} channel {part.channels[li]} "
                        f"out of range for layer {li}"
                    )
                planted = part.anchor + part.offsets[li]
                if np.any(planted < margin) or np.any(planted > 1.0 - margin):
                    raise ValidationError(
                        f"part {part.name!r} layer {li}: anchor too close to a "
                        f"border for 3-sigma jitter"
                    )


@dataclass
class PartTruth:
    base: np.ndarray                   # (2,) part center on this image
    layer_positions: np.ndarray        # (n_layers, 2)
    channels: list[int]


@dataclass
class ImageTruth:
    translation: np.ndarray
    parts: dict[str, PartTruth]
    distractors: list[tuple[int, int, np.ndarray]]  # (layer, channel, position)


@dataclass
class SynthTruth:
    spec: SynthSpec
    images: dict[str, ImageTruth] = field(default_factory=dict)

    def landmark_view(self) -> dict[str, dict[str, np.ndarray]]:
        """Part base positions as per-image landmarks."""
        return {
            image_id: {name: pt.base.copy() for name, pt in truth.parts.items()}
            for image_id, truth in self.images.items()
        }


def _render_bump(
    canvas: np.ndarray, grid: np.ndarray, center: np.ndarray,
    sigma: float, amplitude: float,
) -> None:
    diff = grid - center[None, :]
    sq = (diff * diff).sum(axis=1)
    support = sq <= (3.0 * sigma) ** 2
    canvas.ravel()[support] += amplitude * np.exp(-sq[support] / (2.0 * sigma**2))


def _truncated_normal(rng: np.random.Generator, sigma: float, size) -> np.ndarray:
    if sigma == 0:
        return np.zeros(size)
    return np.clip(rng.normal(0.0, sigma, size=size), -3.0 * sigma, 3.0 * sigma)


def generate(spec: SynthSpec) -> tuple[dict[str, dict[int, FeatureMap]], SynthTruth]:
    """Render all images; returns ({image_id: {layer_index: map}}, truth)."""
    spec.validate()
    truth = SynthTruth(spec=spec)
    fmaps: dict[str, dict[int, FeatureMap]] = {}
    master = np.random.SeedSequence(spec.seed)
    seeds = master.spawn(spec.images)
    grids = [
        grid_positions(shape.height, shape.width) for shape in spec.layers
    ]
    for index in range(spec.images):
        image_id = f"img{index:04d}"
        rng = np.random.default_rng(seeds[index])
        translation = _truncated_normal(rng, spec.sigma_pose, 2)
        parts: dict[str, PartTruth] = {}
        canvases = [
            np.zeros((shape.channels, shape.height, shape.width))
            for shape in spec.layers
        ]
        for part in spec.parts:
            jitter = _truncated_normal(rng, spec.sigma_part, 2)
            base = part.anchor + translation + jitter
            layer_positions = base[None, :] + part.offsets
            parts[part.name] = PartTruth(
                base=base,
                layer_positions=layer_positions,
                channels=list(part.channels),
            )
            for li, shape in enumerate(spec.layers):
                sigma = spec.bump_width_cells / min(shape.height, shape.width)
                _render_bump(
                    canvases[li][part.channels[li]],
                    grids[li],
                    layer_positions[li],
                    sigma,
                    1.0,
                )
        distractors = []
        for li, shape in enumerate(spec.layers):
            sigma = spec.bump_width_cells / min(shape.height, shape.width)
            for _ in range(spec.distractors):
                channel = int(rng.integers(0, shape.channels))
                position = rng.random(2)
                distractors.append((li, channel, position))
                _render_bump(
                    canvases[li][channel], grids[li], position,
                    sigma, spec.distractor_amplitude,
                )
        truth.images[image_id] = ImageTruth(
            translation=translation, parts=parts, distractors=distractors
        )
        fmaps[image_id] = {
            li: FeatureMap(
                image_id=image_id,
                layer_index=li,
                values=canvases[li].astype(np.float32),
                image_width_px=spec.image_width_px,
                image_height_px=spec.image_height_px,
            )
            for li in range(len(spec.layers))
        }
    return fmaps, truth


# ---------------------------------------------------------------------------
# matching learned nodes against planted parts


@dataclass
class PartMatch:
    part: str
    layer: int
    channel: int
    node: NodeId | None
    mean_error_cells: float
    max_error_cells: float
    images_used: int

    @property
    def missed(self) -> bool:
        return self.node is None


def match_nodes_to_truth(
    graph: ExplanatoryGraph,
    results: Mapping[str, InferenceResult],
    truth: SynthTruth,
) -> list[PartMatch]:
    """Optimal per-channel assignment of learned nodes to planted parts.

    Parts sharing a channel must claim distinct nodes; the assignment
    minimizing total mean inferred-vs-true distance is found by brute force
    over the channel's nodes.  Errors are reported in grid-cell units.
    """
    matches: list[PartMatch] = []
    image_ids = sorted(set(truth.images) & set(results))
    for li, shape in enumerate(truth.spec.layers):
        cells = min(shape.height, shape.width)
        groups: dict[int, list[str]] = {}
        for part in truth.spec.parts:
            groups.setdefault(part.channels[li], []).append(part.name)
        for channel in sorted(groups):
            part_names = sorted(groups[channel])
            nodes = [
                n.id
                for n in graph.layers[li].nodes
                if n.id.channel == channel
            ]
            errors: dict[tuple[str, NodeId], tuple[float, float, int]] = {}
            for node_id in nodes:
                per_image: dict[str, np.ndarray] = {}
                for image_id in image_ids:
                    assignment = results[image_id].assignment_map().get(node_id)
                    if assignment is not None and assignment.position is not None:
                        per_image[image_id] = assignment.position
                for name in part_names:
                    dists = [
                        np.linalg.norm(
                            per_image[i]
                            - truth.images[i].parts[name].layer_positions[li]
                        )
                        for i in per_image
                    ]
                    if dists:
                        errors[(name, node_id)] = (
                            float(np.mean(dists) * cells),
                            float(np.max(dists) * cells),
                            len(dists),
                        )
            best: tuple[float, tuple[NodeId, ...]] | None = None
            usable = [n for n in nodes if any((p, n) in errors for p in part_names)]
            if len(usable) >= len(part_names):
                for combo in permutations(usable, len(part_names)):
                    if any((p, n) not in errors for p, n in zip(part_names, combo)):
                        continue
                    cost = sum(
                        errors[(p, n)][0] for p, n in zip(part_names, combo)
                    )
                    if best is None or cost < best[0]:
                        best = (cost, combo)
            if best is None:
                for name in part_names:
                    matches.append(
                        PartMatch(name, li, channel, None, np.inf, np.inf, 0)
                    )
                continue
            for name, node_id in zip(part_names, best[1]):
                mean_err, max_err, used = errors[(name, node_id)]
                matches.append(
                    PartMatch(name, li, channel, node_id, mean_err, max_err, used)
                )
    return matches


# ---------------------------------------------------------------------------
# documents


def spec_to_doc(spec: SynthSpec) -> dict:
    return {
        "schema": SPEC_SCHEMA,
        "seed": spec.seed,
        "images": spec.images,
        "image_width_px": spec.image_width_px,
        "image_height_px": spec.image_height_px,
        "sigma_pose": spec.sigma_pose,
        "sigma_part": spec.sigma_part,
        "distractors": spec.distractors,
        "distractor_amplitude": spec.distractor_amplitude,
        "bump_width_cells": spec.bump_width_cells,
        "layers": [
            {"channels": s.channels, "height": s.height, "width": s.width}
            for s in spec.layers
        ],
        "parts": [
            {
                "name": p.name,
                "anchor": [float(p.anchor[0]), float(p.anchor[1])],
                "channels": list(p.channels),
                "offsets": [[float(o[0]), float(o[1])] for o in p.offsets],
            }
            for p in spec.parts
        ],
    }


def spec_from_doc(doc) -> SynthSpec:
    expect_schema(doc, SPEC_SCHEMA)
    try:
        spec = SynthSpec(
            layers=[
                LayerShape(int(s["channels"]), int(s["height"]), int(s["width"]))
                for s in doc["layers"]
            ],
            images=int(doc["images"]),
            parts=[
                PartSpec(
                    name=str(p["name"]),
                    anchor=np.array(p["anchor"], dtype=np.float64),
                    channels=[int(c) for c in p["channels"]],
                    offsets=np.array(p["offsets"], dtype=np.float64),
                )
                for p in doc.get("parts", [])
            ],
            sigma_pose=float(doc.get("sigma_pose", 0.05)),
            sigma_part=float(doc.get("sigma_part", 0.01)),
            distractors=int(doc.get("distractors", 2)),
            distractor_amplitude=float(doc.get("distractor_amplitude", 0.4)),
            bump_width_cells=float(doc.get("bump_width_cells", 1.0)),
            image_width_px=int(doc.get("image_width_px", 224)),
            image_height_px=int(doc.get("image_height_px", 224)),
            seed=int(doc.get("seed", 0)),
        )
    except (KeyError, TypeError) as exc:
        raise InputError(f"malformed synth spec: {exc}") from exc
    spec.validate()
    return spec


def load_spec(path: str | Path) -> SynthSpec:
    return spec_from_doc(load_yaml_text(Path(path).read_text(encoding="utf-8")))


def save_spec(spec: SynthSpec, path: str | Path) -> None:
    Path(path).write_text(dump_yaml(spec_to_doc(spec)), encoding="utf-8")


def truth_to_doc(truth: SynthTruth) -> dict:
    return {
        "schema": TRUTH_SCHEMA,
        "spec": spec_to_doc(truth.spec),
        "images": {
            image_id: {
                "translation": [float(v) for v in item.translation],
                "parts": {
                    name: {
                        "base": [float(v) for v in pt.base],
                        "channels": list(pt.channels),
                        "layer_positions": [
                            [float(v) for v in row] for row in pt.layer_positions
                        ],
                    }
                    for name, pt in sorted(item.parts.items())
                },
                "distractors": [
                    {
                        "layer": li,
                        "channel": ch,
                        "position": [float(v) for v in pos],
                    }
                    for li, ch, pos in item.distractors
                ],
            }
            for image_id, item in sorted(truth.images.items())
        },
    }


def truth_from_doc(doc) -> SynthTruth:
    expect_schema(doc, TRUTH_SCHEMA)
    spec = spec_from_doc(doc["spec"])
    truth = SynthTruth(spec=spec)
    for image_id, item in doc["images"].items():
        truth.images[str(image_id)] = ImageTruth(
            translation=np.array(item["translation"], dtype=np.float64),
            parts={
                name: PartTruth(
                    base=np.array(pt["base"], dtype=np.float64),
                    layer_positions=np.array(
                        pt["layer_positions"], dtype=np.float64
                    ),
                    channels=[int(c) for c in pt["channels"]],
                )
                for name, pt in item["parts"].items()
            },
            distractors=[
                (
                    int(d["layer"]),
                    int(d["channel"]),
                    np.array(d["position"], dtype=np.float64),
                )
                for d in item.get("distractors", [])
            ],
        )
    return truth


def save_truth(truth: SynthTruth, path: str | Path) -> None:
    Path(path).write_text(dump_yaml(truth_to_doc(truth)), encoding="utf-8")


def load_truth(path: str | Path) -> SynthTruth:
    return truth_from_doc(load_yaml_text(Path(path).read_text(encoding="utf-8")))


def save_landmarks(
    landmarks: Mapping[str, Mapping[str, Sequence[float]]], path: str | Path
) -> None:
    doc = {
        "schema": LANDMARKS_SCHEMA,
        "images": {
            image_id: {
                name: [float(p[0]), float(p[1])]
                for name, p in sorted(dict(points).items())
            }
            for image_id, points in sorted(landmarks.items())
        },
    }
    Path(path).write_text(dump_yaml(doc), encoding="utf-8")


def load_landmarks(path: str | Path) -> dict[str, dict[str, np.ndarray]]:
    doc = load_yaml_text(Path(path).read_text(encoding="utf-8"))
    expect_schema(doc, LANDMARKS_SCHEMA)
    return {
        str(image_id): {
            str(name): np.array(p, dtype=np.float64)
            for name, p in points.items()
        }
        for image_id, points in doc["images"].items()
    }
