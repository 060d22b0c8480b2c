"""Instability metric, baseline, heatmaps, and patch extraction."""

import numpy as np
import pytest

from partgraph.errors import MetricError
from partgraph.fmap import FeatureMap
from partgraph.metrics import (
    location_instability,
    normalized_distance,
    raw_filter_peak_baseline,
    read_pgm,
    render_heatmap,
    render_heatmap_u8,
    top_patches,
    write_pgm,
)


class TestNormalizedDistance:
    def test_zero_for_exact(self):
        assert normalized_distance(np.array([0.2, 0.7]), np.array([0.2, 0.7]), 640, 480) == 0.0

    def test_pythagorean_example(self):
        # (3, 4) pixel offset on a 300 x 400 image: 5 / 500
        pred = np.array([0.5 + 3 / 300, 0.5 + 4 / 400])
        truth = np.array([0.5, 0.5])
        assert normalized_distance(pred, truth, 300, 400) == pytest.approx(0.01, rel=1e-12)


def uniform_dims(ids, w=200, h=200):
    return {i: (w, h) for i in ids}


class TestLocationInstability:
    def test_constant_offset_zero_instability(self):
        landmark = np.array([0.5, 0.5])
        assignments, landmarks = {}, {}
        for i in range(6):
            image_id = f"i{i}"
            assignments[image_id] = (landmark + [0.1, 0.0], 1.0 + i)
            landmarks[image_id] = {"head": landmark.copy()}
        report = location_instability(
            assignments, landmarks, uniform_dims(assignments), node_label="n"
        )
        assert report.combined == pytest.approx(0.0, abs=1e-15)

    def test_hand_computed_two_image_deviation(self):
        # normalized distances 0.1 and 0.2 -> population std 0.05
        w = h = 100
        diag = np.hypot(w, h)
        assignments = {
            "a": (np.array([0.5 + 0.1 * diag / w, 0.5]), 2.0),
            "b": (np.array([0.5 + 0.2 * diag / w, 0.5]), 1.0),
        }
        landmarks = {k: {"head": np.array([0.5, 0.5])} for k in assignments}
        report = location_instability(
            assignments, landmarks, uniform_dims(assignments, w, h), node_label="n"
        )
        assert report.per_landmark["head"] == pytest.approx(0.05, rel=1e-9)
        assert report.combined == pytest.approx(0.05, rel=1e-9)

    def test_combined_is_mean_over_landmarks(self):
        rng = np.random.default_rng(4)
        assignments, landmarks = {}, {}
        for i in range(8):
            image_id = f"i{i}"
            assignments[image_id] = (rng.random(2), float(rng.random()))
            landmarks[image_id] = {
                "head": rng.random(2), "back": rng.random(2), "tail": rng.random(2)
            }
        report = location_instability(
            assignments, landmarks, uniform_dims(assignments), node_label="n"
        )
        assert report.combined == pytest.approx(
            np.mean(list(report.per_landmark.values()))
        )
        assert set(report.per_landmark) == {"head", "back", "tail"}

    def test_translation_invariance(self):
        rng = np.random.default_rng(9)
        shift_per_image = {f"i{i}": rng.normal(0, 0.05, 2) for i in range(6)}
        base_positions = {k: rng.random(2) * 0.5 + 0.25 for k in shift_per_image}
        landmark = {k: rng.random(2) * 0.5 + 0.25 for k in shift_per_image}
        scores = {k: float(rng.random()) for k in shift_per_image}

        def report(shifted: bool):
            assignments, marks = {}, {}
            for k in shift_per_image:
                offset = shift_per_image[k] if shifted else 0.0
                assignments[k] = (base_positions[k] + offset, scores[k])
                marks[k] = {"head": landmark[k] + offset}
            return location_instability(
                assignments, marks, uniform_dims(assignments), node_label="n"
            )

        assert report(True).combined == pytest.approx(report(False).combined, abs=1e-12)

    def test_top_n_selection_by_score(self):
        # 25 images; the 20 best scores have constant distance, the rest vary
        landmark = np.array([0.5, 0.5])
        assignments, landmarks = {}, {}
        for i in range(25):
            image_id = f"i{i:02d}"
            if i < 20:
                position, score = landmark + [0.1, 0.0], 100.0 - i
            else:
                position, score = landmark + [0.1 + 0.01 * i, 0.0], 1.0
            assignments[image_id] = (position, score)
            landmarks[image_id] = {"head": landmark.copy()}
        report = location_instability(
            assignments, landmarks, uniform_dims(assignments), top_n_images=20,
            node_label="n",
        )
        assert report.combined == pytest.approx(0.0, abs=1e-15)
        assert len(report.images_used) == 20

    def test_too_few_images_rejected(self):
        with pytest.raises(MetricError, match="at least 2"):
            location_instability(
                {"a": (np.array([0.5, 0.5]), 1.0)},
                {"a": {"head": np.array([0.5, 0.5])}},
                {"a": (10, 10)},
                node_label="n",
            )


class TestRawFilterBaseline:
    def test_single_hot_unit(self):
        values = np.zeros((2, 4, 4), dtype=np.float32)
        values[1, 2, 3] = 5.0
        fmap = FeatureMap("a", 0, values, 100, 100)
        peaks = raw_filter_peak_baseline({"a": fmap})
        position, score = peaks[1]["a"]
        np.testing.assert_allclose(position, [(3 + 0.5) / 4, (2 + 0.5) / 4])
        assert score == 5.0

    def test_all_zero_channel_unassigned(self):
        values = np.zeros((1, 3, 3), dtype=np.float32)
        fmap = FeatureMap("a", 0, values, 100, 100)
        peaks = raw_filter_peak_baseline({"a": fmap})
        assert peaks[0]["a"] == (None, 0.0)

    def test_negative_responses_treated_as_zero(self):
        values = np.full((1, 3, 3), -2.0, dtype=np.float32)
        fmap = FeatureMap("a", 0, values, 100, 100)
        peaks = raw_filter_peak_baseline({"a": fmap})
        assert peaks[0]["a"] == (None, 0.0)

    def test_shared_channel_baseline_less_stable_than_nodes(self, synth_world):
        """Directional reproduction: learned nodes beat raw peaks on mixing channels."""
        from partgraph.synthgen import match_nodes_to_truth

        truth = synth_world["truth"]
        spec = synth_world["spec"]
        landmarks = truth.landmark_view()
        dims = {
            i: (spec.image_width_px, spec.image_height_px) for i in truth.images
        }
        bottom = {i: m[0] for i, m in synth_world["fmaps"].items()}
        peaks = raw_filter_peak_baseline(bottom)
        part_channels = sorted({p.channels[0] for p in spec.parts})
        baseline_scores = [
            location_instability(
                peaks[d], landmarks, dims, node_label=f"filter{d}"
            ).combined
            for d in part_channels
        ]
        matches = match_nodes_to_truth(
            synth_world["graph"], synth_world["results"], truth
        )
        node_scores = []
        for m in matches:
            if m.layer != 0 or m.missed:
                continue
            assignments = {
                i: (
                    synth_world["results"][i].assignment_map()[m.node].position,
                    synth_world["results"][i].assignment_map()[m.node].score,
                )
                for i in truth.images
            }
            node_scores.append(
                location_instability(
                    assignments, landmarks, dims, node_label=str(m.node)
                ).combined
            )
        assert np.mean(node_scores) < np.mean(baseline_scores)


class TestHeatmap:
    def test_empty_selection_zero_raster(self):
        canvas = render_heatmap([], 16, 16)
        assert np.all(canvas == 0)
        assert np.all(render_heatmap_u8(canvas) == 0)

    def test_single_pattern_peak_at_position(self):
        canvas = render_heatmap(
            [(np.array([0.52, 0.27]), 2.0, 0.004)], 40, 40, top_fraction=1.0
        )
        row, col = np.unravel_index(np.argmax(canvas), canvas.shape)
        assert row == int(0.27 * 40) and col == int(0.52 * 40)

    def test_symmetric_patterns_give_symmetric_raster(self):
        # dyadic positions keep the reflection exact in floating point
        assignments = [
            (np.array([0.25, 0.5]), 1.0, 0.01),
            (np.array([0.75, 0.5]), 1.0, 0.01),
        ]
        canvas = render_heatmap(assignments, 8, 8, top_fraction=1.0)
        assert np.array_equal(canvas, canvas[:, ::-1])

    def test_total_mass_matches_score_sum(self):
        # quadrature: sum * pixel area approximates the integral of the field
        assignments = [
            (np.array([0.5, 0.5]), 1.5, 0.002),
            (np.array([0.4, 0.6]), 0.5, 0.001),
        ]
        canvas = render_heatmap(assignments, 200, 200, top_fraction=1.0)
        mass = canvas.sum() / (200 * 200)
        assert mass == pytest.approx(2.0, abs=1e-3)

    def test_top_fraction_cut(self):
        assignments = [
            (np.array([0.2, 0.2]), 5.0, 0.001),
            (np.array([0.8, 0.8]), 0.1, 0.001),
        ]
        canvas = render_heatmap(assignments, 50, 50, top_fraction=0.5)
        # only the high-score pattern contributes
        assert canvas[int(0.2 * 50), int(0.2 * 50)] > 0
        assert canvas[int(0.8 * 50), int(0.8 * 50)] == pytest.approx(0.0, abs=1e-12)

    def test_pgm_roundtrip(self, tmp_path):
        rng = np.random.default_rng(0)
        raster = rng.integers(0, 256, size=(9, 13), dtype=np.uint8)
        path = tmp_path / "h.pgm"
        write_pgm(raster, path)
        assert np.array_equal(read_pgm(path), raster)


class TestTopPatches:
    def test_centered_box(self):
        assignments = {"a": (np.array([0.5, 0.5]), 1.0)}
        [(image_id, box)] = top_patches(assignments, {"a": (200, 200)}, fraction=1.0)
        assert image_id == "a" and box == (65, 65, 135, 135)

    def test_corner_box_clamped(self):
        assignments = {"a": (np.array([0.0, 0.0]), 1.0)}
        [(_, box)] = top_patches(assignments, {"a": (200, 200)}, fraction=1.0)
        assert box == (0, 0, 70, 70)

    def test_small_image_box_truncated(self):
        assignments = {"a": (np.array([0.5, 0.5]), 1.0)}
        [(_, box)] = top_patches(assignments, {"a": (50, 50)}, fraction=1.0)
        assert box == (0, 0, 50, 50)

    def test_full_fraction_includes_all_scored(self):
        assignments = {
            "a": (np.array([0.5, 0.5]), 1.0),
            "b": (np.array([0.2, 0.2]), 0.5),
            "c": (None, 0.0),
        }
        dims = {k: (100, 100) for k in assignments}
        patches = top_patches(assignments, dims, fraction=1.0)
        assert [p[0] for p in patches] == ["a", "b"]
