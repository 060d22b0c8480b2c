"""Assign each graph node its best unit on a new image, top-down.

The score of putting node V on unit x is F(x) times the node's spatial
compatibility at the unit's projected position; each node takes the argmax
unit of its channel, ties broken by lowest (row, col).  A node whose channel
is silent stays unassigned with score 0.  Upper-layer assignments feed the
parent evidence of the layer below.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import InputError, ParseError
from .fmap import FeatureMap, grid_positions
from .graph import ExplanatoryGraph, GraphLayer, NodeId
from .mixture import (
    ParentEvidence,
    log_compat_dummy,
    log_compat_parented,
    resolve_evidence,
)
from .textio import dump_yaml, expect_schema, load_yaml_text

RESULT_SCHEMA = "partgraph-result/1"


@dataclass
class NodeAssignment:
    node: NodeId
    unit: tuple[int, int, int] | None  # (channel, row, col)
    position: np.ndarray | None
    score: float


@dataclass
class LayerInference:
    layer_index: int
    grid: tuple[int, int]  # (height, width)
    assignments: list[NodeAssignment]


@dataclass
class InferenceResult:
    image_id: str
    image_width_px: int
    image_height_px: int
    layers: list[LayerInference]  # bottom..top, aligned with the graph

    def assignment_map(self) -> dict[NodeId, NodeAssignment]:
        return {a.node: a for layer in self.layers for a in layer.assignments}


def _node_evidence(
    node_parents: list[NodeId],
    upper_layer: GraphLayer | None,
    upper_assignments: Mapping[NodeId, tuple[np.ndarray | None, float]] | None,
) -> ParentEvidence | float | None:
    if not node_parents:
        return None
    lookup = {n.id: n for n in upper_layer.nodes}
    mus = np.stack([lookup[p].mu for p in node_parents])
    sig2 = np.array([lookup[p].sigma2 for p in node_parents])
    positions = []
    for p in node_parents:
        entry = upper_assignments.get(p) if upper_assignments else None
        positions.append(entry[0] if entry is not None else None)
    return resolve_evidence(mus, sig2, positions)


def infer_layer(
    layer: GraphLayer,
    fmap: FeatureMap,
    upper_layer: GraphLayer | None,
    upper_assignments: Mapping[NodeId, tuple[np.ndarray | None, float]] | None,
    beta: float,
) -> list[NodeAssignment]:
    """Argmax unit per node of one layer; assignments sorted by node id."""
    if fmap.channels != layer.channels:
        raise InputError(
            f"feature map has {fmap.channels} channels, layer expects {layer.channels}"
        )
    grid = grid_positions(fmap.height, fmap.width)
    values = fmap.values.astype(np.float64)
    weights = {}
    for node in layer.nodes:
        d = node.id.channel
        if d not in weights:
            flat = np.maximum(values[d].ravel(), 0.0) * (
                beta / layer.channel_max[d]
            )
            weights[d] = flat
    out = []
    for node in sorted(layer.nodes, key=lambda n: n.id):
        d = node.id.channel
        flat = weights[d]
        mask = flat > 0.0
        if not np.any(mask):
            out.append(NodeAssignment(node.id, None, None, 0.0))
            continue
        points = grid[mask]
        evidence = _node_evidence(node.parents, upper_layer, upper_assignments)
        if isinstance(evidence, ParentEvidence):
            log_compat = log_compat_parented(points, node.mu, evidence)
        else:
            variance = node.sigma2 if evidence is None else evidence
            log_compat = log_compat_dummy(points, node.mu, variance)
        log_scores = np.log(flat[mask]) + log_compat
        local = int(np.argmax(log_scores))  # first max = lowest (row, col)
        flat_index = int(np.flatnonzero(mask)[local])
        row, col = divmod(flat_index, fmap.width)
        out.append(
            NodeAssignment(
                node=node.id,
                unit=(d, row, col),
                position=grid[flat_index].copy(),
                score=float(np.exp(log_scores[local])),
            )
        )
    return out


def infer_layer_assignments(
    layer: GraphLayer,
    fmap: FeatureMap,
    upper_layer: GraphLayer | None,
    upper_assignments: Mapping[NodeId, tuple[np.ndarray | None, float]] | None,
    beta: float,
) -> dict[NodeId, tuple[np.ndarray | None, float]]:
    """infer_layer reduced to the {node: (position, score)} evidence form."""
    return {
        a.node: (a.position, a.score)
        for a in infer_layer(layer, fmap, upper_layer, upper_assignments, beta)
    }


def infer_image(
    graph: ExplanatoryGraph, fmaps: Mapping[int, FeatureMap]
) -> InferenceResult:
    """Top-down inference over all graph layers for one image."""
    wanted = [layer.layer_index for layer in graph.layers]
    missing = [li for li in wanted if li not in fmaps]
    extra = [li for li in fmaps if li not in wanted]
    if missing or extra:
        raise InputError(
            f"layer mismatch: graph expects {wanted}, missing {missing}, extra {extra}"
        )
    ids = {fmaps[li].image_id for li in wanted}
    dims = {(fmaps[li].image_width_px, fmaps[li].image_height_px) for li in wanted}
    if len(ids) != 1 or len(dims) != 1:
        raise InputError("feature maps disagree on image id or pixel dims")

    beta = graph.hyperparams.beta
    layers: list[LayerInference | None] = [None] * len(graph.layers)
    upper_layer = None
    upper_assign = None
    for pos in reversed(range(len(graph.layers))):
        layer = graph.layers[pos]
        fmap = fmaps[layer.layer_index]
        assignments = infer_layer(layer, fmap, upper_layer, upper_assign, beta)
        layers[pos] = LayerInference(
            layer_index=layer.layer_index,
            grid=(fmap.height, fmap.width),
            assignments=assignments,
        )
        upper_assign = {a.node: (a.position, a.score) for a in assignments}
        upper_layer = layer
    (width_px, height_px) = next(iter(dims))
    return InferenceResult(
        image_id=next(iter(ids)),
        image_width_px=width_px,
        image_height_px=height_px,
        layers=layers,
    )


def top_k_energy(
    scores: Sequence[tuple[str, float]], fraction: float = 0.3
) -> tuple[int, list[str]]:
    """Smallest K whose top scores reach `fraction` of the total energy.

    Returns (K, image ids sorted by score descending, ties by id).  A zero
    total yields (0, []).
    """
    ordered = sorted(scores, key=lambda item: (-item[1], item[0]))
    values = np.array([s for _, s in ordered], dtype=np.float64)
    if len(values) == 0:
        return 0, []
    cumulative = np.cumsum(values)
    total = cumulative[-1]
    if total <= 0:
        return 0, []
    k = int(np.searchsorted(cumulative, fraction * total) + 1)
    k = min(k, len(values))
    return k, [ordered[i][0] for i in range(k)]


# ---------------------------------------------------------------------------
# result documents


def result_to_doc(result: InferenceResult) -> dict:
    return {
        "schema": RESULT_SCHEMA,
        "image_id": result.image_id,
        "image_width_px": result.image_width_px,
        "image_height_px": result.image_height_px,
        "layers": [
            {
                "layer_index": layer.layer_index,
                "grid": [layer.grid[0], layer.grid[1]],
                "assignments": [
                    {
                        "node": [a.node.layer, a.node.channel, a.node.slot],
                        "unit": list(a.unit) if a.unit is not None else None,
                        "position": (
                            [float(a.position[0]), float(a.position[1])]
                            if a.position is not None
                            else None
                        ),
                        "score": float(a.score),
                    }
                    for a in layer.assignments
                ],
            }
            for layer in result.layers
        ],
    }


def result_from_doc(doc) -> InferenceResult:
    expect_schema(doc, RESULT_SCHEMA)
    layers = []
    for layer_doc in doc["layers"]:
        assignments = []
        for a in layer_doc["assignments"]:
            node = NodeId(*(int(v) for v in a["node"]))
            unit = tuple(int(v) for v in a["unit"]) if a["unit"] is not None else None
            position = (
                np.array(a["position"], dtype=np.float64)
                if a["position"] is not None
                else None
            )
            assignments.append(NodeAssignment(node, unit, position, float(a["score"])))
        layers.append(
            LayerInference(
                layer_index=int(layer_doc["layer_index"]),
                grid=(int(layer_doc["grid"][0]), int(layer_doc["grid"][1])),
                assignments=assignments,
            )
        )
    return InferenceResult(
        image_id=str(doc["image_id"]),
        image_width_px=int(doc["image_width_px"]),
        image_height_px=int(doc["image_height_px"]),
        layers=layers,
    )


def save_result(result: InferenceResult, path: str | Path) -> None:
    Path(path).write_text(dump_yaml(result_to_doc(result)), encoding="utf-8")


def load_result(path: str | Path) -> InferenceResult:
    doc = load_yaml_text(Path(path).read_text(encoding="utf-8"))
    try:
        return result_from_doc(doc)
    except (KeyError, TypeError) as exc:
        raise ParseError(f"malformed inference result {path}: {exc}") from exc
