"""And-Or graph construction, score propagation, few-shot localization."""

import numpy as np
import pytest

from partgraph.aog import (
    AndOrGraph,
    Localization,
    PartAnnotation,
    PartTemplate,
    TemplateChild,
    build_aog,
    build_template,
    evaluate_localization,
    load_aog,
    localize,
    save_aog,
)
from partgraph.errors import InputError
from partgraph.graph import NodeId
from partgraph.inference import InferenceResult, LayerInference, NodeAssignment


def result_with(assignments, image_id="img", grid=(14, 14)) -> InferenceResult:
    """assignments: list of (NodeId, position|None, score)."""
    entries = [
        NodeAssignment(
            node=nid,
            unit=(nid.channel, 0, 0) if pos is not None else None,
            position=np.asarray(pos, dtype=float) if pos is not None else None,
            score=score,
        )
        for nid, pos, score in assignments
    ]
    return InferenceResult(
        image_id=image_id,
        image_width_px=224,
        image_height_px=224,
        layers=[LayerInference(layer_index=0, grid=grid, assignments=entries)],
    )


class TestBuildTemplate:
    def test_single_node_delta(self):
        nid = NodeId(0, 0, 0)
        result = result_with([(nid, [0.4, 0.4], 2.0)])
        annotation = PartAnnotation("img", "head", 0, [0.5, 0.6])
        template = build_template(annotation, result, retrieval_k=1)
        [child] = template.children
        assert child.node == nid
        np.testing.assert_allclose(child.delta, [0.1, 0.2])

    def test_closer_node_ranked_first(self):
        near, far = NodeId(0, 0, 0), NodeId(0, 1, 0)
        result = result_with(
            [(near, [0.52, 0.5], 1.0), (far, [0.9, 0.9], 1.0)]
        )
        annotation = PartAnnotation("img", "head", 0, [0.5, 0.5])
        template = build_template(annotation, result, retrieval_k=2)
        assert [c.node for c in template.children] == [near, far]

    def test_no_assigned_nodes_empty_template(self):
        result = result_with([(NodeId(0, 0, 0), None, 0.0)])
        annotation = PartAnnotation("img", "head", 1, [0.5, 0.5])
        template = build_template(annotation, result, retrieval_k=3)
        assert template.index == 1 and template.children == []

    def test_k_limits_children(self):
        entries = [
            (NodeId(0, d, 0), [0.5 + 0.01 * d, 0.5], 1.0) for d in range(6)
        ]
        result = result_with(entries)
        annotation = PartAnnotation("img", "head", 0, [0.5, 0.5])
        template = build_template(annotation, result, retrieval_k=4)
        assert len(template.children) == 4


class TestLocalize:
    def test_single_child_propagation(self):
        nid = NodeId(0, 0, 0)
        aog = AndOrGraph(
            part="head",
            templates=[PartTemplate(0, [TemplateChild(nid, [0.1, 0.2])])],
            retrieval_k=1,
        )
        result = result_with([(nid, [0.3, 0.3], 1.5)])
        loc = localize(aog, result)
        assert loc.ok and loc.template == 0
        assert loc.score == pytest.approx(1.5)
        np.testing.assert_allclose(loc.position, [0.4, 0.5])

    def test_symmetric_children_cancel(self):
        a, b = NodeId(0, 0, 0), NodeId(0, 1, 0)
        delta = np.array([0.07, -0.03])
        aog = AndOrGraph(
            part="head",
            templates=[
                PartTemplate(0, [TemplateChild(a, -delta), TemplateChild(b, delta)])
            ],
            retrieval_k=2,
        )
        p_star = np.array([0.5, 0.5])
        result = result_with([(a, p_star + delta, 1.0), (b, p_star - delta, 1.0)])
        loc = localize(aog, result)
        np.testing.assert_allclose(loc.position, p_star, atol=1e-15)

    def test_unassigned_child_contributes_zero(self):
        a, b = NodeId(0, 0, 0), NodeId(0, 1, 0)
        aog = AndOrGraph(
            part="head",
            templates=[
                PartTemplate(0, [TemplateChild(a, [0, 0]), TemplateChild(b, [0, 0])])
            ],
            retrieval_k=2,
        )
        result = result_with([(a, [0.4, 0.4], 2.0), (b, None, 0.0)])
        loc = localize(aog, result)
        assert loc.score == pytest.approx(2.0)
        np.testing.assert_allclose(loc.position, [0.4, 0.4])

    def test_template_additivity(self):
        a, b = NodeId(0, 0, 0), NodeId(0, 1, 0)
        both = AndOrGraph(
            "head", [PartTemplate(0, [TemplateChild(a, [0, 0]), TemplateChild(b, [0, 0])])], 2
        )
        only_a = AndOrGraph("head", [PartTemplate(0, [TemplateChild(a, [0, 0])])], 1)
        result = result_with([(a, [0.4, 0.4], 2.0), (b, [0.6, 0.6], 0.7)])
        assert localize(both, result).score - localize(only_a, result).score == pytest.approx(0.7)

    def test_argmax_template_invariant_to_score_scaling(self):
        a, b = NodeId(0, 0, 0), NodeId(0, 1, 0)
        aog = AndOrGraph(
            "head",
            [
                PartTemplate(0, [TemplateChild(a, [0, 0])]),
                PartTemplate(1, [TemplateChild(b, [0, 0])]),
            ],
            1,
        )
        base = result_with([(a, [0.4, 0.4], 2.0), (b, [0.6, 0.6], 0.7)])
        scaled = result_with([(a, [0.4, 0.4], 6.0), (b, [0.6, 0.6], 2.1)])
        assert localize(aog, base).template == localize(aog, scaled).template == 0
        np.testing.assert_allclose(
            localize(aog, base).position, localize(aog, scaled).position
        )

    def test_translation_equivariance_of_position(self):
        a, b = NodeId(0, 0, 0), NodeId(0, 1, 0)
        aog = AndOrGraph(
            "head",
            [PartTemplate(0, [TemplateChild(a, [0.02, 0.01]), TemplateChild(b, [-0.04, 0.0])])],
            2,
        )
        shift = np.array([0.07, 0.11])
        base = result_with([(a, [0.3, 0.3], 1.0), (b, [0.5, 0.4], 2.0)])
        moved = result_with([(a, [0.3, 0.3] + shift, 1.0), (b, [0.5, 0.4] + shift, 2.0)])
        np.testing.assert_allclose(
            localize(aog, moved).position, localize(aog, base).position + shift,
            atol=1e-15,
        )

    def test_all_templates_empty_is_failure(self):
        aog = AndOrGraph("head", [PartTemplate(0, []), PartTemplate(1, [])], 1)
        result = result_with([(NodeId(0, 0, 0), [0.4, 0.4], 1.0)])
        loc = localize(aog, result)
        assert not loc.ok and loc.position is None


class TestEvaluate:
    def test_perfect_predictions(self):
        preds = {"a": Localization(True, np.array([0.5, 0.5]), 0, 1.0)}
        truth = {"a": np.array([0.5, 0.5])}
        assert evaluate_localization(preds, truth, {"a": (100, 100)}) == 0.0

    def test_single_known_offset(self):
        preds = {"a": Localization(True, np.array([0.5 + 3 / 300, 0.5 + 4 / 400]), 0, 1.0)}
        truth = {"a": np.array([0.5, 0.5])}
        assert evaluate_localization(preds, truth, {"a": (300, 400)}) == pytest.approx(0.01)

    def test_failure_counts_as_one(self):
        preds = {
            "a": Localization(True, np.array([0.5, 0.5]), 0, 1.0),
            "b": Localization(False, None, None, 0.0),
        }
        truth = {"a": np.array([0.5, 0.5]), "b": np.array([0.1, 0.1])}
        dims = {k: (100, 100) for k in truth}
        assert evaluate_localization(preds, truth, dims) == pytest.approx(0.5)

    def test_id_mismatch_rejected(self):
        preds = {"a": Localization(True, np.array([0.5, 0.5]), 0, 1.0)}
        truth = {"b": np.array([0.5, 0.5])}
        with pytest.raises(InputError, match="mismatch"):
            evaluate_localization(preds, truth, {})


class TestDocuments:
    def test_aog_roundtrip(self, tmp_path):
        aog = AndOrGraph(
            part="head",
            templates=[
                PartTemplate(0, [TemplateChild(NodeId(1, 2, 3), [0.25, -0.125])]),
                PartTemplate(1, []),
            ],
            retrieval_k=7,
            sigma_retrieve=0.3,
        )
        path = tmp_path / "m.aog"
        save_aog(aog, path)
        back = load_aog(path)
        assert back.part == "head" and back.retrieval_k == 7
        assert back.templates[0].children[0].node == NodeId(1, 2, 3)
        np.testing.assert_array_equal(
            back.templates[0].children[0].delta, [0.25, -0.125]
        )
        assert back.templates[1].children == []


class TestRecommendedK:
    def test_tenth_of_node_total(self, synth_world):
        from partgraph.aog import recommended_retrieval_k

        graph = synth_world["graph"]
        assert recommended_retrieval_k(graph) == max(
            1, round(0.1 * graph.node_count())
        )
        assert recommended_retrieval_k(graph, 0.4) == round(0.4 * graph.node_count())


class TestFewShotOnSynth(object):
    def test_three_shot_beats_constant_baseline(self, synth_world):
        """Direction-only analogue of the part-localization comparison."""
        truth = synth_world["truth"]
        spec = synth_world["spec"]
        results = synth_world["results"]
        image_ids = sorted(truth.images)
        annotated, test_ids = image_ids[:3], image_ids[3:]
        part = "pa"
        annotations = [
            PartAnnotation(
                image_id=i, part=part, template=t,
                position=truth.images[i].parts[part].base,
            )
            for t, i in enumerate(annotated)
        ]
        aog = build_aog(annotations, results, retrieval_k=6)
        dims = {i: (spec.image_width_px, spec.image_height_px) for i in image_ids}
        preds = {i: localize(aog, results[i]) for i in test_ids}
        truth_pos = {i: truth.images[i].parts[part].base for i in test_ids}
        ours = evaluate_localization(preds, truth_pos, dims)

        anchor = np.mean([a.position for a in annotations], axis=0)
        const = {i: Localization(True, anchor, 0, 1.0) for i in test_ids}
        baseline = evaluate_localization(const, truth_pos, dims)
        assert ours < baseline
