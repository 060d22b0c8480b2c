"""Few-shot part localization through a hybrid And-Or graph.

A semantic part (OR) chooses among part templates (AND); each template was
built from a single annotated image by retrieving the graph nodes that
scored highest near the annotation, weighted by a wide Gaussian, and
remembering each node's displacement to the annotated center.  On a new
image the template score is the sum of its children's inference scores and
its position the mean of the displaced child positions; the best template
wins.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import InputError, ParseError
from .graph import ExplanatoryGraph, NodeId
from .inference import InferenceResult
from .metrics import normalized_distance
from .mixture import gauss2d
from .textio import dump_yaml, expect_schema, load_yaml_text

log = logging.getLogger("partgraph.aog")

AOG_SCHEMA = "partgraph-aog/1"
ANNOTATIONS_SCHEMA = "partgraph-annotations/1"
PREDICTIONS_SCHEMA = "partgraph-predictions/1"

DEFAULT_SIGMA_RETRIEVE = 0.3  # in normalized image-width units


@dataclass
class PartAnnotation:
    image_id: str
    part: str
    template: int
    position: np.ndarray

    def __post_init__(self) -> None:
        self.position = np.asarray(self.position, dtype=np.float64).reshape(2)


@dataclass
class TemplateChild:
    node: NodeId
    delta: np.ndarray  # displacement from the pattern to the template center

    def __post_init__(self) -> None:
        self.delta = np.asarray(self.delta, dtype=np.float64).reshape(2)


@dataclass
class PartTemplate:
    index: int
    children: list[TemplateChild] = field(default_factory=list)


@dataclass
class AndOrGraph:
    part: str
    templates: list[PartTemplate]
    retrieval_k: int
    sigma_retrieve: float = DEFAULT_SIGMA_RETRIEVE


@dataclass
class Localization:
    ok: bool
    position: np.ndarray | None
    template: int | None
    score: float


def recommended_retrieval_k(graph: ExplanatoryGraph, fraction: float = 0.1) -> int:
    """Retrieval size as a fraction of the graph's total node count.

    The reference protocol uses 0.1 of the node total on the larger
    datasets (0.4 on the small one); there is no selection rule beyond
    that, so K stays an explicit input and this is only a convenience.
    """
    return max(1, int(round(fraction * graph.node_count())))


def build_template(
    annotation: PartAnnotation,
    result: InferenceResult,
    retrieval_k: int,
    sigma_retrieve: float = DEFAULT_SIGMA_RETRIEVE,
) -> PartTemplate:
    """Retrieve the top-K nodes by score times a wide Gaussian at the annotation."""
    variance = sigma_retrieve**2
    scored = []
    for node_id, assignment in sorted(result.assignment_map().items()):
        if assignment.position is None or assignment.score <= 0:
            continue
        weight = assignment.score * gauss2d(
            assignment.position, annotation.position, variance
        )
        scored.append((float(weight), node_id, assignment.position))
    if not scored:
        log.warning(
            "no assigned patterns on %s; template %d is empty",
            annotation.image_id, annotation.template,
        )
        return PartTemplate(index=annotation.template, children=[])
    scored.sort(key=lambda item: (-item[0], item[1]))
    children = [
        TemplateChild(node=node_id, delta=annotation.position - position)
        for _, node_id, position in scored[:retrieval_k]
    ]
    return PartTemplate(index=annotation.template, children=children)


def build_aog(
    annotations: Sequence[PartAnnotation],
    results: Mapping[str, InferenceResult],
    retrieval_k: int,
    sigma_retrieve: float = DEFAULT_SIGMA_RETRIEVE,
) -> AndOrGraph:
    """One template per annotation; annotations define template membership."""
    if not annotations:
        raise InputError("at least one annotation required")
    parts = {a.part for a in annotations}
    if len(parts) != 1:
        raise InputError(f"annotations span multiple parts: {sorted(parts)}")
    templates = {}
    for annotation in annotations:
        if annotation.template in templates:
            raise InputError(f"duplicate annotation for template {annotation.template}")
        if annotation.image_id not in results:
            raise InputError(
                f"no inference result for annotated image {annotation.image_id!r}"
            )
        templates[annotation.template] = build_template(
            annotation, results[annotation.image_id], retrieval_k, sigma_retrieve
        )
    return AndOrGraph(
        part=annotations[0].part,
        templates=[templates[k] for k in sorted(templates)],
        retrieval_k=retrieval_k,
        sigma_retrieve=sigma_retrieve,
    )


def localize(aog: AndOrGraph, result: InferenceResult) -> Localization:
    """Score propagation: unit -> pattern -> template (sum) -> part (max)."""
    assignment_map = result.assignment_map()
    best: tuple[float, int, np.ndarray] | None = None
    for template in aog.templates:
        total = 0.0
        positions = []
        for child in template.children:
            assignment = assignment_map.get(child.node)
            if assignment is None or assignment.position is None:
                continue  # unassigned children contribute nothing
            total += assignment.score
            positions.append(assignment.position + child.delta)
        if not positions:
            continue
        position = np.mean(np.stack(positions), axis=0)
        if best is None or total > best[0]:
            best = (total, template.index, position)
    if best is None:
        return Localization(ok=False, position=None, template=None, score=0.0)
    score, index, position = best
    return Localization(ok=True, position=position, template=index, score=score)


def evaluate_localization(
    predictions: Mapping[str, Localization],
    truth: Mapping[str, np.ndarray],
    image_dims: Mapping[str, tuple[int, int]],
) -> float:
    """Mean normalized distance; localization failures count as distance 1."""
    if set(predictions) != set(truth):
        missing = sorted(set(truth) ^ set(predictions))
        raise InputError(f"prediction/truth id mismatch: {missing}")
    distances = []
    for image_id in sorted(truth):
        pred = predictions[image_id]
        if not pred.ok:
            distances.append(1.0)
            continue
        width, height = image_dims[image_id]
        distances.append(
            normalized_distance(pred.position, truth[image_id], width, height)
        )
    return float(np.mean(distances))


# ---------------------------------------------------------------------------
# documents


def aog_to_doc(aog: AndOrGraph) -> dict:
    return {
        "schema": AOG_SCHEMA,
        "part": aog.part,
        "retrieval_k": aog.retrieval_k,
        "sigma_retrieve": aog.sigma_retrieve,
        "templates": [
            {
                "index": t.index,
                "children": [
                    {
                        "node": [c.node.layer, c.node.channel, c.node.slot],
                        "delta": [float(c.delta[0]), float(c.delta[1])],
                    }
                    for c in t.children
                ],
            }
            for t in aog.templates
        ],
    }


def aog_from_doc(doc) -> AndOrGraph:
    expect_schema(doc, AOG_SCHEMA)
    try:
        return AndOrGraph(
            part=str(doc["part"]),
            retrieval_k=int(doc["retrieval_k"]),
            sigma_retrieve=float(doc.get("sigma_retrieve", DEFAULT_SIGMA_RETRIEVE)),
            templates=[
                PartTemplate(
                    index=int(t["index"]),
                    children=[
                        TemplateChild(
                            node=NodeId(*(int(v) for v in c["node"])),
                            delta=np.array(c["delta"], dtype=np.float64),
                        )
                        for c in t["children"]
                    ],
                )
                for t in doc["templates"]
            ],
        )
    except (KeyError, TypeError) as exc:
        raise ParseError(f"malformed AOG document: {exc}") from exc


def save_aog(aog: AndOrGraph, path: str | Path) -> None:
    Path(path).write_text(dump_yaml(aog_to_doc(aog)), encoding="utf-8")


def load_aog(path: str | Path) -> AndOrGraph:
    return aog_from_doc(load_yaml_text(Path(path).read_text(encoding="utf-8")))


def load_annotations(path: str | Path) -> list[PartAnnotation]:
    doc = load_yaml_text(Path(path).read_text(encoding="utf-8"))
    expect_schema(doc, ANNOTATIONS_SCHEMA)
    try:
        return [
            PartAnnotation(
                image_id=str(a["image_id"]),
                part=str(doc["part"]),
                template=int(a["template"]),
                position=np.array(a["position"], dtype=np.float64),
            )
            for a in doc["annotations"]
        ]
    except (KeyError, TypeError) as exc:
        raise ParseError(f"malformed annotations document: {exc}") from exc


def save_annotations(annotations: Sequence[PartAnnotation], path: str | Path) -> None:
    parts = {a.part for a in annotations}
    if len(parts) != 1:
        raise InputError("annotation files hold a single part")
    doc = {
        "schema": ANNOTATIONS_SCHEMA,
        "part": annotations[0].part,
        "annotations": [
            {
                "image_id": a.image_id,
                "template": a.template,
                "position": [float(a.position[0]), float(a.position[1])],
            }
            for a in annotations
        ],
    }
    Path(path).write_text(dump_yaml(doc), encoding="utf-8")


def save_predictions(
    part: str,
    predictions: Mapping[str, Localization],
    image_dims: Mapping[str, tuple[int, int]],
    path: str | Path,
) -> None:
    doc = {
        "schema": PREDICTIONS_SCHEMA,
        "part": part,
        "predictions": {
            image_id: {
                "ok": bool(p.ok),
                "template": p.template,
                "position": (
                    [float(p.position[0]), float(p.position[1])]
                    if p.position is not None
                    else None
                ),
                "score": float(p.score),
                "image_width_px": image_dims[image_id][0],
                "image_height_px": image_dims[image_id][1],
            }
            for image_id, p in sorted(predictions.items())
        },
    }
    Path(path).write_text(dump_yaml(doc), encoding="utf-8")


def load_predictions(
    path: str | Path,
) -> tuple[str, dict[str, Localization], dict[str, tuple[int, int]]]:
    doc = load_yaml_text(Path(path).read_text(encoding="utf-8"))
    expect_schema(doc, PREDICTIONS_SCHEMA)
    predictions, dims = {}, {}
    for image_id, p in doc["predictions"].items():
        predictions[str(image_id)] = Localization(
            ok=bool(p["ok"]),
            position=(
                np.array(p["position"], dtype=np.float64)
                if p["position"] is not None
                else None
            ),
            template=p["template"],
            score=float(p["score"]),
        )
        dims[str(image_id)] = (int(p["image_width_px"]), int(p["image_height_px"]))
    return str(doc["part"]), predictions, dims
