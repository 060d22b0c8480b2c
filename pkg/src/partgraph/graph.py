"""The learned graph: pattern nodes, layer structure, and `.egraph` text files.

A graph is immutable once learning finishes.  Layers are ordered bottom-up
(layer 0 = lowest conv-layer); every node in a non-top layer points at 1..M
parents in the layer directly above, top-layer nodes are dummy-parented
(empty parent list).  Each layer also carries the per-channel training
maxima used to turn raw responses into entity weights, so inference on new
images reproduces scores exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import ParseError, ValidationError
from .textio import dump_yaml, expect_schema, load_yaml_text

SCHEMA = "partgraph-egraph/1"


@dataclass(frozen=True, order=True)
class NodeId:
    """(graph layer, channel, slot) triple; slot indexes nodes within a channel."""

    layer: int
    channel: int
    slot: int

    def __str__(self) -> str:
        return f"{self.layer}:{self.channel}:{self.slot}"

    @classmethod
    def parse(cls, text: str) -> "NodeId":
        parts = text.split(":")
        if len(parts) != 3:
            raise ParseError(f"node id must be layer:channel:slot, got {text!r}")
        try:
            layer, channel, slot = (int(p) for p in parts)
        except ValueError as exc:
            raise ParseError(f"non-integer node id component in {text!r}") from exc
        return cls(layer, channel, slot)


@dataclass
class PatternNode:
    """One disentangled part pattern: prior position, spread, parent edges."""

    id: NodeId
    mu: np.ndarray
    sigma2: float
    parents: list[NodeId] = field(default_factory=list)
    dormant: bool = False

    def __post_init__(self) -> None:
        self.mu = np.asarray(self.mu, dtype=np.float64).reshape(2)


@dataclass
class GraphLayer:
    layer_index: int  # source feature-map layer id
    channels: int
    nodes_per_channel: int
    channel_max: np.ndarray
    nodes: list[PatternNode]

    def __post_init__(self) -> None:
        self.channel_max = np.asarray(self.channel_max, dtype=np.float64).reshape(
            self.channels
        )


@dataclass
class Hyperparams:
    tau: float = 0.1
    max_parents: int = 15
    iterations: int = 20
    beta: float = 1.0
    sigma2_init: float = 0.0625
    sigma2_floor: float = 1e-4
    eta: float = 1e-3
    candidate_pool: int = 100
    mode: str = "closed_form"
    seed: int = 0


@dataclass
class ExplanatoryGraph:
    """Ordered layers of pattern nodes plus the hyperparameters that built them."""

    layers: list[GraphLayer]
    hyperparams: Hyperparams

    def __iter__(self) -> Iterator[PatternNode]:
        for layer in self.layers:
            yield from layer.nodes

    def node_count(self) -> int:
        return sum(len(layer.nodes) for layer in self.layers)

    def layer(self, position: int) -> GraphLayer:
        return self.layers[position]

    def node_lookup(self) -> dict[NodeId, PatternNode]:
        return {node.id: node for node in self}

    def validate(self) -> None:
        """Check every structural invariant; raise listing the offending ids."""
        seen: set[NodeId] = set()
        duplicates: list[NodeId] = []
        for node in self:
            if node.id in seen:
                duplicates.append(node.id)
            seen.add(node.id)
        if duplicates:
            raise ValidationError(
                "duplicate node ids: " + ", ".join(str(i) for i in duplicates)
            )

        n_layers = len(self.layers)
        bad: list[str] = []
        for pos, layer in enumerate(self.layers):
            if len(layer.channel_max) != layer.channels:
                bad.append(f"layer {pos}: channel_max length mismatch")
            for node in layer.nodes:
                if node.id.layer != pos:
                    bad.append(f"{node.id}: stored in layer {pos}")
                if not (0 <= node.id.channel < layer.channels):
                    bad.append(f"{node.id}: channel out of range")
                if not (0 <= node.id.slot < layer.nodes_per_channel):
                    bad.append(f"{node.id}: slot out of range")
                if node.sigma2 < self.hyperparams.sigma2_floor:
                    bad.append(f"{node.id}: sigma2 {node.sigma2} below floor")
                if not np.all(np.isfinite(node.mu)):
                    bad.append(f"{node.id}: non-finite mu")
                is_top = pos == n_layers - 1
                if is_top and node.parents:
                    bad.append(f"{node.id}: top-layer node has parents")
                if not is_top:
                    if not node.parents:
                        bad.append(f"{node.id}: non-top node has no parents")
                    if len(node.parents) > self.hyperparams.max_parents:
                        bad.append(f"{node.id}: more than max_parents parents")
                if len(set(node.parents)) != len(node.parents):
                    bad.append(f"{node.id}: duplicate parents")
                for parent in node.parents:
                    if parent.layer != pos + 1:
                        bad.append(f"{node.id}: parent {parent} not in layer above")
                    elif parent not in seen:
                        bad.append(f"{node.id}: dangling parent {parent}")
        if bad:
            raise ValidationError("; ".join(bad))


def _id_list(node_id: NodeId) -> list[int]:
    return [node_id.layer, node_id.channel, node_id.slot]


def save_graph(graph: ExplanatoryGraph) -> str:
    """Render a validated graph as the `.egraph` text document."""
    graph.validate()
    hp = graph.hyperparams
    doc = {
        "schema": SCHEMA,
        "hyperparams": {
            "tau": hp.tau,
            "max_parents": hp.max_parents,
            "iterations": hp.iterations,
            "beta": hp.beta,
            "sigma2_init": hp.sigma2_init,
            "sigma2_floor": hp.sigma2_floor,
            "eta": hp.eta,
            "candidate_pool": hp.candidate_pool,
            "mode": hp.mode,
            "seed": hp.seed,
        },
        "layers": [
            {
                "layer_index": layer.layer_index,
                "channels": layer.channels,
                "nodes_per_channel": layer.nodes_per_channel,
                "channel_max": [float(v) for v in layer.channel_max],
                "nodes": [
                    {
                        "id": _id_list(node.id),
                        "mu": [float(node.mu[0]), float(node.mu[1])],
                        "sigma2": float(node.sigma2),
                        "parents": [_id_list(p) for p in node.parents],
                        "dormant": bool(node.dormant),
                    }
                    for node in layer.nodes
                ],
            }
            for layer in graph.layers
        ],
    }
    return dump_yaml(doc)


def _parse_id(raw, context: str) -> NodeId:
    if not (isinstance(raw, list) and len(raw) == 3):
        raise ParseError(f"{context}: node id must be a [layer, channel, slot] list")
    return NodeId(int(raw[0]), int(raw[1]), int(raw[2]))


def load_graph(text: str) -> ExplanatoryGraph:
    """Parse and validate an `.egraph` document."""
    doc = load_yaml_text(text)
    expect_schema(doc, SCHEMA)
    hp_doc = doc.get("hyperparams", {})
    try:
        hyper = Hyperparams(**hp_doc)
    except TypeError as exc:
        raise ParseError(f"bad hyperparams block: {exc}") from exc
    layers = []
    for pos, layer_doc in enumerate(doc.get("layers", []) or []):
        nodes = []
        for node_doc in layer_doc.get("nodes", []):
            nodes.append(
                PatternNode(
                    id=_parse_id(node_doc.get("id"), f"layer {pos}"),
                    mu=np.array(node_doc["mu"], dtype=np.float64),
                    sigma2=float(node_doc["sigma2"]),
                    parents=[
                        _parse_id(p, f"layer {pos}") for p in node_doc.get("parents", [])
                    ],
                    dormant=bool(node_doc.get("dormant", False)),
                )
            )
        layers.append(
            GraphLayer(
                layer_index=int(layer_doc["layer_index"]),
                channels=int(layer_doc["channels"]),
                nodes_per_channel=int(layer_doc["nodes_per_channel"]),
                channel_max=np.array(layer_doc["channel_max"], dtype=np.float64),
                nodes=nodes,
            )
        )
    graph = ExplanatoryGraph(layers=layers, hyperparams=hyper)
    graph.validate()
    return graph


def save_graph_file(graph: ExplanatoryGraph, path: str | Path) -> None:
    Path(path).write_text(save_graph(graph), encoding="utf-8")


def load_graph_file(path: str | Path) -> ExplanatoryGraph:
    return load_graph(Path(path).read_text(encoding="utf-8"))
