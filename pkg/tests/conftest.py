"""Shared synthetic fixtures for the learner, metrics, and AOG tests."""

import numpy as np
import pytest

from partgraph.inference import infer_image
from partgraph.learner import LearnConfig, learn_graph
from partgraph.synthgen import LayerShape, PartSpec, SynthSpec, generate


def small_synth_spec(images=30, seed=5) -> SynthSpec:
    """Two layers, 8 channels, two parts sharing bottom channel 0."""
    return SynthSpec(
        layers=[LayerShape(8, 14, 14), LayerShape(8, 7, 7)],
        images=images,
        parts=[
            PartSpec("pa", [0.32, 0.35], channels=[0, 1], offsets=[[0, 0], [0.02, 0.0]]),
            PartSpec("pb", [0.68, 0.62], channels=[0, 2], offsets=[[0, 0], [-0.02, 0.0]]),
            PartSpec("pc", [0.40, 0.68], channels=[3, 4], offsets=[[0, 0], [0.0, 0.02]]),
        ],
        sigma_pose=0.06,
        sigma_part=0.008,
        distractors=3,
        distractor_amplitude=0.4,
        seed=seed,
    )


def small_learn_config(**overrides) -> LearnConfig:
    base = dict(
        nodes_per_channel=(4, 4),
        max_parents=3,
        iterations=8,
        candidate_pool=16,
        seed=11,
    )
    base.update(overrides)
    return LearnConfig(**base)


@pytest.fixture(scope="session")
def synth_world():
    """Generated maps + truth + learned graph + inference, reused across tests."""
    spec = small_synth_spec()
    fmaps, truth = generate(spec)
    result = learn_graph(fmaps, small_learn_config())
    inference = {i: infer_image(result.graph, m) for i, m in fmaps.items()}
    return {
        "spec": spec,
        "fmaps": fmaps,
        "truth": truth,
        "graph": result.graph,
        "traces": result.traces,
        "results": inference,
    }


def rng_for(name: str) -> np.random.Generator:
    return np.random.default_rng(abs(hash(name)) % (2**32))
