"""Layer-wise EM fitting of pattern nodes and greedy parent-edge selection.

Learning runs top-down: the top layer is fit against the dummy-parent
convention, its inference results then anchor the next layer below, and so
on.  Within a layer each iteration computes responsibilities once, updates
every node's position and spread in closed form (block maximizers of the
expected complete-data objective, so the data likelihood cannot decrease),
then re-selects parent edges greedily with a monotonicity guard.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError, InputError
from .fmap import FeatureMap
from .graph import ExplanatoryGraph, GraphLayer, Hyperparams, NodeId, PatternNode
from .mixture import (
    LOG_TWO_PI,
    LayerEntities,
    NodeView,
    layer_log_likelihood,
    resolve_evidence,
)

log = logging.getLogger("partgraph.learner")

DORMANT_MASS = 1e-12


@dataclass
class LearnConfig:
    """All learning hyperparameters; CLI flags mirror these names 1:1."""

    tau: float = 0.1
    max_parents: int = 15
    iterations: int = 20
    beta: float = 1.0
    nodes_per_channel: tuple[int, ...] = (20,)
    sigma2_init: float = 0.0625
    sigma2_floor: float = 1e-4
    eta: float = 1e-3
    candidate_pool: int = 100
    seed: int = 0
    mode: str = "closed_form"

    def validate(self) -> None:
        positive = {
            "tau": self.tau,
            "max_parents": self.max_parents,
            "iterations": self.iterations,
            "beta": self.beta,
            "sigma2_init": self.sigma2_init,
            "sigma2_floor": self.sigma2_floor,
            "eta": self.eta,
            "candidate_pool": self.candidate_pool,
        }
        for name, value in positive.items():
            if value <= 0:
                raise ConfigError(f"{name} must be positive, got {value}")
        if not self.nodes_per_channel or any(n <= 0 for n in self.nodes_per_channel):
            raise ConfigError("nodes_per_channel entries must be positive")
        if self.mode not in ("closed_form", "gradient"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.sigma2_init < self.sigma2_floor:
            raise ConfigError("sigma2_init must be at least sigma2_floor")

    def nodes_for_layer(self, position: int, n_layers: int) -> int:
        if len(self.nodes_per_channel) == 1:
            return self.nodes_per_channel[0]
        if len(self.nodes_per_channel) != n_layers:
            raise ConfigError(
                f"nodes_per_channel has {len(self.nodes_per_channel)} entries "
                f"for {n_layers} layers"
            )
        return self.nodes_per_channel[position]

    def hyperparams(self) -> Hyperparams:
        return Hyperparams(
            tau=self.tau,
            max_parents=self.max_parents,
            iterations=self.iterations,
            beta=self.beta,
            sigma2_init=self.sigma2_init,
            sigma2_floor=self.sigma2_floor,
            eta=self.eta,
            candidate_pool=self.candidate_pool,
            mode=self.mode,
            seed=self.seed,
        )


# ---------------------------------------------------------------------------
# internal data layout


class ChannelData:
    """One channel's entities across all images, flattened for vector math."""

    def __init__(self, positions: list[np.ndarray], weights: list[np.ndarray]):
        self.n_img = len(positions)
        self.pos = (
            np.concatenate(positions, axis=0) if positions else np.zeros((0, 2))
        )
        self.w = np.concatenate(weights) if weights else np.zeros(0)
        idx = [np.full(len(w), i, dtype=np.intp) for i, w in enumerate(weights)]
        self.img_idx = np.concatenate(idx) if idx else np.zeros(0, dtype=np.intp)

    def per_image_sums(self, values: np.ndarray) -> np.ndarray:
        return np.bincount(self.img_idx, weights=values, minlength=self.n_img)


@dataclass
class UpperInfo:
    """Fitted upper layer viewed as parent-candidate arrays over images."""

    ids: list[NodeId]
    mus: np.ndarray        # (m, 2)
    sigma2: np.ndarray     # (m,)
    positions: np.ndarray  # (n_img, m, 2); parent mu where unassigned
    assigned: np.ndarray   # (n_img, m) bool
    scores: np.ndarray     # (n_img, m)

    def index_of(self, node_id: NodeId) -> int:
        return self.ids.index(node_id)


@dataclass
class LayerInputs:
    image_ids: list[str]
    channels: int
    channel_data: list[ChannelData]
    entities_by_image: dict[str, LayerEntities]
    upper: UpperInfo | None  # None for the top layer


class NodeState:
    """Mutable per-node fit state plus its per-image collapsed-form cache."""

    def __init__(self, node_id: NodeId, mu: np.ndarray, sigma2: float):
        self.id = node_id
        self.mu = np.asarray(mu, dtype=np.float64)
        self.sigma2 = float(sigma2)
        self.parents: list[NodeId] = []
        self.dormant = False
        # per-image collapsed cache: log compat(p) = logc - |p - mu - delta|^2 / (2 var)
        self.delta: np.ndarray | None = None  # (n_img, 2)
        self.var: np.ndarray | None = None    # (n_img,)
        self.logc: np.ndarray | None = None   # (n_img,)

    @property
    def channel(self) -> int:
        return self.id.channel

    def to_pattern_node(self) -> PatternNode:
        return PatternNode(
            id=self.id,
            mu=self.mu.copy(),
            sigma2=self.sigma2,
            parents=list(self.parents),
            dormant=self.dormant,
        )


def _collapse_arrays(
    mask: np.ndarray, pdelta: np.ndarray, inv: np.ndarray, sig2: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Per-image (delta, var, logc, parented) for a parent set.

    mask (n_img, k) marks parents assigned on each image, pdelta (n_img, k, 2)
    their observed displacement, inv (k,) the parent precisions.  Images with
    no assigned parent fall back to a dummy Gaussian with the full-set
    collapsed variance.
    """
    n_img = mask.shape[0]
    total = (mask * inv).sum(axis=1)
    kk = mask.sum(axis=1)
    parented = kk > 0
    num = (mask[:, :, None] * pdelta * inv[None, :, None]).sum(axis=1)
    delta = np.zeros((n_img, 2))
    var = np.empty(n_img)
    logc = np.empty(n_img)
    fallback_var = len(inv) / inv.sum()
    var[~parented] = fallback_var
    logc[~parented] = -(LOG_TWO_PI + math.log(fallback_var))
    if np.any(parented):
        delta[parented] = num[parented] / total[parented, None]
        var[parented] = kk[parented] / total[parented]
        diff = pdelta - delta[:, None, :]
        sq = (diff * diff).sum(axis=2) * inv[None, :] * mask
        s1 = sq.sum(axis=1)
        s2 = (mask * (LOG_TWO_PI + np.log(sig2))[None, :]).sum(axis=1)
        logc[parented] = -(0.5 * s1[parented] + s2[parented]) / kk[parented]
    return delta, var, logc, parented


def _refresh_cache(node: NodeState, inputs: LayerInputs) -> None:
    """Rebuild the node's per-image collapsed cache from its parent set."""
    n_img = len(inputs.image_ids)
    if not node.parents:
        node.delta = np.zeros((n_img, 2))
        node.var = np.full(n_img, node.sigma2)
        node.logc = np.full(n_img, -(LOG_TWO_PI + math.log(node.sigma2)))
        return
    upper = inputs.upper
    idx = [upper.index_of(p) for p in node.parents]
    mask = upper.assigned[:, idx].astype(np.float64)
    pdelta = upper.positions[:, idx, :] - upper.mus[idx][None, :, :]
    sig2 = upper.sigma2[idx]
    node.delta, node.var, node.logc, _ = _collapse_arrays(
        mask, pdelta, 1.0 / sig2, sig2
    )


def _node_row(node: NodeState, data: ChannelData) -> np.ndarray:
    """Log compatibility of the node at every entity of its channel."""
    center = node.mu[None, :] + node.delta[data.img_idx]
    diff = data.pos - center
    sq = (diff * diff).sum(axis=1)
    return node.logc[data.img_idx] - sq / (2.0 * node.var[data.img_idx])


# ---------------------------------------------------------------------------
# spec-level update operations


def update_mu(
    mu_old: np.ndarray,
    positions: np.ndarray,
    fq: np.ndarray,
    deltas: np.ndarray,
    variances: np.ndarray,
    mode: str = "closed_form",
    eta: float = 1e-3,
) -> tuple[np.ndarray, bool]:
    """One position update from per-entity responsibilities.

    positions (n, 2), fq (n,) = F(x) q(V|x), deltas (n, 2) per-entity parent
    shift, variances (n,) the per-entity collapsed variance.  Closed form is
    the precision-weighted mean of (p - delta) - the exact maximizer of the
    expected complete-data objective (plain mean when variances are uniform,
    matching the simple weighted-average reading).  Returns (mu, dormant).
    """
    mass = float(fq.sum())
    if mass < DORMANT_MASS:
        return np.asarray(mu_old, dtype=np.float64).copy(), True
    if mode == "closed_form":
        w = fq / variances
        mu = (w[:, None] * (positions - deltas)).sum(axis=0) / w.sum()
        return mu, False
    if mode == "gradient":
        resid = positions - np.asarray(mu_old)[None, :] - deltas
        grad = (fq[:, None] * resid / variances[:, None]).sum(axis=0)
        return np.asarray(mu_old, dtype=np.float64) + eta * grad, False
    raise ConfigError(f"unknown mode {mode!r}")


def update_sigma2(
    mu_new: np.ndarray,
    positions: np.ndarray,
    fq: np.ndarray,
    deltas: np.ndarray,
    floor: float,
    sigma2_old: float,
) -> float:
    """Responsibility-weighted dispersion of p - mu - delta, halved per axis."""
    mass = float(fq.sum())
    if mass < DORMANT_MASS:
        return sigma2_old
    resid = positions - np.asarray(mu_new)[None, :] - deltas
    sq = (resid * resid).sum(axis=1)
    return max(floor, float((fq * sq).sum() / (2.0 * mass)))


# ---------------------------------------------------------------------------
# greedy edge selection


@dataclass
class EdgeProblem:
    """Everything edge selection needs for one node, frozen responsibilities."""

    data: ChannelData
    fq: np.ndarray            # (n,) F(x) q(V|x) for this node
    rest: np.ndarray          # (n,) sum of the other components + tau
    node_sigma2: float
    mu_current: np.ndarray    # position after this iteration's update
    parents_current: list[NodeId]
    upper: UpperInfo
    max_parents: int
    candidate_pool: int

    def __post_init__(self) -> None:
        self.mass_per_image = self.data.per_image_sums(self.fq)
        self.mass = float(self.fq.sum())
        self.wp = np.stack(
            [
                self.data.per_image_sums(self.fq * self.data.pos[:, 0]),
                self.data.per_image_sums(self.fq * self.data.pos[:, 1]),
            ],
            axis=1,
        )  # (n_img, 2) responsibility-weighted position sums


def _candidate_pool(problem: EdgeProblem) -> list[int]:
    """Top-C upper nodes by inference score over the node's active images."""
    active = problem.mass_per_image > DORMANT_MASS
    if not np.any(active):
        active = np.ones_like(active, dtype=bool)
    totals = (problem.upper.scores * active[:, None]).sum(axis=0)
    order = sorted(range(len(totals)), key=lambda j: (-totals[j], problem.upper.ids[j]))
    return order[: problem.candidate_pool]


def _config_row_and_mu(
    problem: EdgeProblem,
    delta: np.ndarray,
    var: np.ndarray,
    logc: np.ndarray,
    refit: bool,
) -> tuple[np.ndarray, np.ndarray]:
    """Refit mu in closed form for a trial parent set and evaluate its row."""
    if refit and problem.mass >= DORMANT_MASS:
        wvar = problem.mass_per_image / var
        denom = wvar.sum()
        num = ((problem.wp - problem.mass_per_image[:, None] * delta) / var[:, None]).sum(
            axis=0
        )
        mu = num / denom
    else:
        mu = problem.mu_current
    data = problem.data
    center = mu[None, :] + delta[data.img_idx]
    diff = data.pos - center
    row = logc[data.img_idx] - (diff * diff).sum(axis=1) / (2.0 * var[data.img_idx])
    return row, mu


def _channel_objective(problem: EdgeProblem, row: np.ndarray) -> float:
    """Channel log-likelihood up to an additive constant shared by all trials."""
    return float(np.dot(problem.data.w, np.log(problem.rest + np.exp(row))))


def select_edges(problem: EdgeProblem) -> tuple[list[NodeId], np.ndarray, float]:
    """Greedy parent choice maximizing the layer likelihood.

    Builds the parent set one candidate at a time (closed-form mu refit after
    each addition), stopping at max_parents or when no candidate improves the
    objective.  The incoming configuration is kept if it beats the greedy
    result, which preserves EM ascent across iterations.  Ties break toward
    the lower NodeId because candidates are scanned in id order within the
    ranked pool and only strict improvements are accepted.
    """
    upper = problem.upper
    pool = _candidate_pool(problem)
    n_img = problem.data.n_img
    refit = problem.mass >= DORMANT_MASS

    # incoming configuration (current parents, current mu) as the guard bar
    if problem.parents_current:
        idx = [upper.index_of(p) for p in problem.parents_current]
        mask = upper.assigned[:, idx].astype(np.float64)
        pdelta = upper.positions[:, idx, :] - upper.mus[idx][None, :, :]
        sig2 = upper.sigma2[idx]
        d0, v0, c0, _ = _collapse_arrays(mask, pdelta, 1.0 / sig2, sig2)
        row_in, _ = _config_row_and_mu(problem, d0, v0, c0, refit=False)
    else:
        d0 = np.zeros((n_img, 2))
        v0 = np.full(n_img, problem.node_sigma2)
        c0 = np.full(n_img, -(LOG_TWO_PI + math.log(problem.node_sigma2)))
        row_in, _ = _config_row_and_mu(problem, d0, v0, c0, refit=False)
    incoming_score = _channel_objective(problem, row_in)

    # greedy from the dummy-parented baseline
    selected: list[int] = []
    dummy_delta = np.zeros((n_img, 2))
    dummy_var = np.full(n_img, problem.node_sigma2)
    dummy_logc = np.full(n_img, -(LOG_TWO_PI + math.log(problem.node_sigma2)))
    row0, mu0 = _config_row_and_mu(problem, dummy_delta, dummy_var, dummy_logc, refit)
    best_score = _channel_objective(problem, row0)
    best_mu = mu0

    def set_arrays(indices: list[int]):
        mask = upper.assigned[:, indices].astype(np.float64)
        pdelta = upper.positions[:, indices, :] - upper.mus[indices][None, :, :]
        sig2 = upper.sigma2[indices]
        return _collapse_arrays(mask, pdelta, 1.0 / sig2, sig2)

    while len(selected) < problem.max_parents:
        round_best = None
        for j in pool:
            if j in selected:
                continue
            trial = selected + [j]
            delta, var, logc, _ = set_arrays(trial)
            row, mu = _config_row_and_mu(problem, delta, var, logc, refit)
            score = _channel_objective(problem, row)
            if score <= best_score:
                continue
            if (
                round_best is None
                or score > round_best[0]
                or (score == round_best[0] and upper.ids[j] < upper.ids[round_best[1]])
            ):
                round_best = (score, j, mu)
        if round_best is None:
            break
        best_score, picked, best_mu = round_best
        selected.append(picked)

    if best_score >= incoming_score:
        return [upper.ids[j] for j in selected], best_mu, best_score
    return list(problem.parents_current), problem.mu_current.copy(), incoming_score


# ---------------------------------------------------------------------------
# layer fitting


@dataclass
class LayerFitState:
    nodes: list[NodeState]
    trace: list[float] = field(default_factory=list)
    responsibilities: dict[int, np.ndarray] = field(default_factory=dict)


@dataclass
class LayerResult:
    nodes: list[PatternNode]
    trace: list[float]


def init_layer(
    config: LearnConfig,
    layer_position: int,
    channels: int,
    nodes_per_channel: int,
    rng: np.random.Generator,
) -> list[NodeState]:
    """Random uniform positions in (0,1)^2, initial spread, dummy parents."""
    nodes = []
    for d in range(channels):
        for slot in range(nodes_per_channel):
            nodes.append(
                NodeState(
                    NodeId(layer_position, d, slot),
                    mu=rng.random(2),
                    sigma2=config.sigma2_init,
                )
            )
    return nodes


def _node_views(
    nodes: Sequence[NodeState], inputs: LayerInputs
) -> list[NodeView]:
    """Literal-path views for the public likelihood (used for the trace)."""
    views = []
    upper = inputs.upper
    for node in nodes:
        evidence: dict = {}
        if node.parents:
            idx = [upper.index_of(p) for p in node.parents]
            mus = upper.mus[idx]
            sig2 = upper.sigma2[idx]
            for i, image_id in enumerate(inputs.image_ids):
                positions = [
                    upper.positions[i, j] if upper.assigned[i, j] else None
                    for j in idx
                ]
                evidence[image_id] = resolve_evidence(mus, sig2, positions)
        views.append(
            NodeView(
                mu=node.mu.copy(),
                sigma2=node.sigma2,
                channel=node.channel,
                evidence_by_image=evidence,
            )
        )
    return views


def _layer_ll(nodes: Sequence[NodeState], inputs: LayerInputs, tau: float) -> float:
    return layer_log_likelihood(
        inputs.entities_by_image, _node_views(nodes, inputs), tau
    )


def _estep(
    nodes_by_channel: dict[int, list[NodeState]],
    inputs: LayerInputs,
    tau: float,
) -> dict[int, np.ndarray]:
    """Responsibility matrices per channel, rows = nodes then noise."""
    out = {}
    for channel, channel_nodes in nodes_by_channel.items():
        data = inputs.channel_data[channel]
        if len(data.w) == 0:
            out[channel] = np.zeros((len(channel_nodes) + 1, 0))
            continue
        rows = [_node_row(node, data) for node in channel_nodes]
        rows.append(np.full(len(data.w), math.log(tau)))
        stack = np.vstack(rows)
        peak = stack.max(axis=0)
        linear = np.exp(stack - peak)
        out[channel] = linear / linear.sum(axis=0)
    return out


def learn_layer(
    inputs: LayerInputs, config: LearnConfig, rng: np.random.Generator,
    layer_position: int, nodes_per_channel: int,
) -> LayerResult:
    """Fit one layer: T iterations of E-step, position/spread updates, edges."""
    config.validate()
    if inputs.upper is not None and not inputs.upper.ids:
        raise ConfigError(
            "upper layer has no nodes; only the top layer may be dummy-parented"
        )
    nodes = init_layer(config, layer_position, inputs.channels, nodes_per_channel, rng)
    state = LayerFitState(nodes=nodes)
    by_channel: dict[int, list[NodeState]] = {}
    for node in nodes:
        by_channel.setdefault(node.channel, []).append(node)
    for node in nodes:
        _refresh_cache(node, inputs)
    is_top = inputs.upper is None

    total_entities = sum(len(d.w) for d in inputs.channel_data)
    if total_entities == 0:
        log.warning("layer %d has no entities; all nodes stay dormant", layer_position)

    state.trace.append(_layer_ll(nodes, inputs, config.tau))
    for _ in range(config.iterations):
        q_by_channel = _estep(by_channel, inputs, config.tau)
        state.responsibilities = q_by_channel

        # position and spread phase: independent block maximizers
        for channel, channel_nodes in by_channel.items():
            data = inputs.channel_data[channel]
            q = q_by_channel[channel]
            for i, node in enumerate(channel_nodes):
                fq = data.w * q[i] if len(data.w) else np.zeros(0)
                deltas = node.delta[data.img_idx]
                variances = node.var[data.img_idx]
                node.mu, node.dormant = update_mu(
                    node.mu, data.pos, fq, deltas, variances,
                    mode=config.mode, eta=config.eta,
                )
                node.sigma2 = update_sigma2(
                    node.mu, data.pos, fq, deltas,
                    config.sigma2_floor, node.sigma2,
                )
                if not node.parents:
                    _refresh_cache(node, inputs)  # own spread entered the cache

        # edge phase, sequential in id order
        if not is_top:
            for channel, channel_nodes in by_channel.items():
                data = inputs.channel_data[channel]
                if len(data.w) == 0:
                    continue
                q = q_by_channel[channel]
                for i, node in enumerate(channel_nodes):
                    if node.dormant:
                        continue
                    rows_other = [
                        _node_row(other, data)
                        for j, other in enumerate(channel_nodes)
                        if j != i
                    ]
                    rest = np.full(len(data.w), config.tau)
                    for row in rows_other:
                        rest += np.exp(row)
                    problem = EdgeProblem(
                        data=data,
                        fq=data.w * q[i],
                        rest=rest,
                        node_sigma2=node.sigma2,
                        mu_current=node.mu,
                        parents_current=node.parents,
                        upper=inputs.upper,
                        max_parents=config.max_parents,
                        candidate_pool=config.candidate_pool,
                    )
                    parents, mu, _ = select_edges(problem)
                    node.parents = parents
                    node.mu = mu
                    _refresh_cache(node, inputs)

        state.trace.append(_layer_ll(nodes, inputs, config.tau))

    if not is_top:
        _finalize_parentless(by_channel, inputs, config)

    return LayerResult(nodes=[n.to_pattern_node() for n in nodes], trace=state.trace)


def _finalize_parentless(
    by_channel: dict[int, list[NodeState]],
    inputs: LayerInputs,
    config: LearnConfig,
) -> None:
    """Force a best-available singleton parent onto still-parentless nodes.

    Non-top nodes must end with at least one parent.  Runs after the last
    trace entry, so the recorded ascent is untouched.
    """
    q_by_channel = _estep(by_channel, inputs, config.tau)
    for channel, channel_nodes in by_channel.items():
        data = inputs.channel_data[channel]
        q = q_by_channel[channel]
        for i, node in enumerate(channel_nodes):
            if node.parents:
                continue
            if len(data.w) == 0:
                node.parents = [min(inputs.upper.ids)]
                _refresh_cache(node, inputs)
                continue
            rows_other = [
                _node_row(other, data)
                for j, other in enumerate(channel_nodes)
                if j != i
            ]
            rest = np.full(len(data.w), config.tau)
            for row in rows_other:
                rest += np.exp(row)
            problem = EdgeProblem(
                data=data,
                fq=data.w * q[i],
                rest=rest,
                node_sigma2=node.sigma2,
                mu_current=node.mu,
                parents_current=[],
                upper=inputs.upper,
                max_parents=1,
                candidate_pool=config.candidate_pool,
            )
            pool = _candidate_pool(problem)
            refit = problem.mass >= DORMANT_MASS
            best = None
            for j in pool:
                idx = [j]
                mask = problem.upper.assigned[:, idx].astype(np.float64)
                pdelta = (
                    problem.upper.positions[:, idx, :]
                    - problem.upper.mus[idx][None, :, :]
                )
                sig2 = problem.upper.sigma2[idx]
                delta, var, logc, _ = _collapse_arrays(mask, pdelta, 1.0 / sig2, sig2)
                row, mu = _config_row_and_mu(problem, delta, var, logc, refit)
                score = _channel_objective(problem, row)
                if (
                    best is None
                    or score > best[0]
                    or (score == best[0] and problem.upper.ids[j] < problem.upper.ids[best[1]])
                ):
                    best = (score, j, mu)
            _, picked, mu = best
            node.parents = [problem.upper.ids[picked]]
            node.mu = mu
            _refresh_cache(node, inputs)


# ---------------------------------------------------------------------------
# whole-graph driver


def compute_channel_max(fmaps: Sequence[FeatureMap]) -> np.ndarray:
    """Per-channel training maxima (post-ReLU); dead channels pinned to 1."""
    channels = fmaps[0].channels
    peak = np.zeros(channels)
    for fmap in fmaps:
        peak = np.maximum(peak, np.maximum(fmap.values, 0.0).max(axis=(1, 2)))
    peak[peak <= 0] = 1.0
    return peak


def build_layer_inputs(
    entities_by_image: Mapping[str, LayerEntities],
    upper_layer: GraphLayer | None,
    upper_assignments: Mapping[str, Mapping[NodeId, tuple[np.ndarray, float]]] | None,
) -> LayerInputs:
    image_ids = sorted(entities_by_image)
    channels = entities_by_image[image_ids[0]].channels
    channel_data = []
    for d in range(channels):
        channel_data.append(
            ChannelData(
                positions=[entities_by_image[i].positions[d] for i in image_ids],
                weights=[entities_by_image[i].weights[d] for i in image_ids],
            )
        )
    upper = None
    if upper_layer is not None:
        ids = sorted(node.id for node in upper_layer.nodes)
        lookup = {node.id: node for node in upper_layer.nodes}
        mus = (
            np.stack([lookup[i].mu for i in ids]) if ids else np.zeros((0, 2))
        )
        sigma2 = np.array([lookup[i].sigma2 for i in ids])
        n_img, m = len(image_ids), len(ids)
        positions = np.tile(mus[None, :, :], (n_img, 1, 1))
        assigned = np.zeros((n_img, m), dtype=bool)
        scores = np.zeros((n_img, m))
        for i, image_id in enumerate(image_ids):
            result = upper_assignments.get(image_id, {})
            for j, node_id in enumerate(ids):
                entry = result.get(node_id)
                if entry is None:
                    continue
                pos, score = entry
                if pos is None:
                    continue
                positions[i, j] = pos
                assigned[i, j] = True
                scores[i, j] = score
        upper = UpperInfo(
            ids=ids, mus=mus, sigma2=sigma2,
            positions=positions, assigned=assigned, scores=scores,
        )
    return LayerInputs(
        image_ids=image_ids,
        channels=channels,
        channel_data=channel_data,
        entities_by_image=dict(entities_by_image),
        upper=upper,
    )


@dataclass
class GraphLearnResult:
    graph: ExplanatoryGraph
    traces: dict[int, list[float]]  # keyed by source layer_index


def learn_graph(
    fmaps_by_image: Mapping[str, Mapping[int, FeatureMap]],
    config: LearnConfig,
) -> GraphLearnResult:
    """Top-down learning across layers, anchored by each layer's inference."""
    from .inference import infer_layer_assignments

    config.validate()
    image_ids = sorted(fmaps_by_image)
    if not image_ids:
        raise InputError("no feature maps supplied")
    layer_indices = sorted({k for maps in fmaps_by_image.values() for k in maps})
    for image_id in image_ids:
        missing = [li for li in layer_indices if li not in fmaps_by_image[image_id]]
        if missing:
            raise InputError(
                f"image {image_id!r} is missing layer(s) {missing}"
            )
    n_layers = len(layer_indices)

    channel_max: dict[int, np.ndarray] = {}
    entities: dict[int, dict[str, LayerEntities]] = {}
    for li in layer_indices:
        maps = [fmaps_by_image[i][li] for i in image_ids]
        widths = {m.channels for m in maps}
        if len(widths) != 1:
            raise InputError(f"layer {li}: inconsistent channel counts {widths}")
        channel_max[li] = compute_channel_max(maps)
        entities[li] = {
            i: LayerEntities.from_feature_map(
                fmaps_by_image[i][li], channel_max[li], config.beta
            )
            for i in image_ids
        }

    graph_layers: list[GraphLayer | None] = [None] * n_layers
    traces: dict[int, list[float]] = {}
    upper_layer: GraphLayer | None = None
    upper_assign: dict[str, dict[NodeId, tuple[np.ndarray | None, float]]] | None = None

    for pos in reversed(range(n_layers)):
        li = layer_indices[pos]
        n_per = config.nodes_for_layer(pos, n_layers)
        inputs = build_layer_inputs(entities[li], upper_layer, upper_assign)
        rng = np.random.default_rng(np.random.SeedSequence([config.seed, pos]))
        result = learn_layer(inputs, config, rng, pos, n_per)
        traces[li] = result.trace
        layer = GraphLayer(
            layer_index=li,
            channels=inputs.channels,
            nodes_per_channel=n_per,
            channel_max=channel_max[li],
            nodes=result.nodes,
        )
        graph_layers[pos] = layer
        upper_assign = {
            image_id: infer_layer_assignments(
                layer,
                fmaps_by_image[image_id][li],
                upper_layer,
                upper_assign[image_id] if upper_assign else None,
                beta=config.beta,
            )
            for image_id in image_ids
        }
        upper_layer = layer

    graph = ExplanatoryGraph(layers=graph_layers, hyperparams=config.hyperparams())
    graph.validate()
    return GraphLearnResult(graph=graph, traces=traces)
