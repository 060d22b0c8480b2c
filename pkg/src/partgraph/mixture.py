"""Pure math for the spatial mixture over activation entities.

Each channel of a feature map is explained by a mixture of its pattern
nodes plus a flat noise component.  A node's compatibility at position p is
the geometric mean of parent-conditioned isotropic Gaussians; that product
collapses to a single Gaussian (up to a p-independent factor), which is what
the learner's fast paths exploit.  Everything here is side-effect free.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError, ValidationError
from .fmap import FeatureMap, grid_positions

log = logging.getLogger("partgraph.mixture")

LOG_TWO_PI = math.log(2.0 * math.pi)


# ---------------------------------------------------------------------------
# entities


@dataclass(frozen=True)
class Entity:
    """One unit's activation mass at its projected position."""

    position: np.ndarray
    weight: float
    channel: int


class LayerEntities:
    """All positive-weight entities of one (image, layer), grouped by channel.

    Positions are (n, 2) float64 in normalized coordinates; weights are the
    entity counts F(x).  Zero-weight units are dropped at construction since
    they contribute nothing anywhere.
    """

    def __init__(self, channels: int, positions_by_channel, weights_by_channel):
        self.channels = channels
        self.positions = [
            np.asarray(p, dtype=np.float64).reshape(-1, 2) for p in positions_by_channel
        ]
        self.weights = [
            np.asarray(w, dtype=np.float64).reshape(-1) for w in weights_by_channel
        ]
        if len(self.positions) != channels or len(self.weights) != channels:
            raise ValidationError("one positions/weights array required per channel")

    @classmethod
    def from_feature_map(
        cls, fmap: FeatureMap, channel_max: np.ndarray, beta: float
    ) -> "LayerEntities":
        """Build entities with weights beta * max(raw, 0) / channel_max."""
        channel_max = np.asarray(channel_max, dtype=np.float64)
        if channel_max.shape != (fmap.channels,):
            raise ConfigError("channel_max length must equal channel count")
        if np.any(channel_max <= 0):
            raise ConfigError("channel_max entries must be positive")
        grid = grid_positions(fmap.height, fmap.width)
        positions, weights = [], []
        values = fmap.values.astype(np.float64)
        for d in range(fmap.channels):
            flat = np.maximum(values[d].ravel(), 0.0) * (beta / channel_max[d])
            mask = flat > 0.0
            positions.append(grid[mask])
            weights.append(flat[mask])
        return cls(fmap.channels, positions, weights)

    def total_weight(self) -> float:
        return float(sum(w.sum() for w in self.weights))


def entity_weight(raw_response: float, channel_max: float, beta: float) -> float:
    """Entity count for one unit: beta * max(raw / channel_max, 0)."""
    if channel_max <= 0:
        raise ConfigError(f"channel_max must be positive, got {channel_max}")
    if beta <= 0:
        raise ConfigError(f"beta must be positive, got {beta}")
    return beta * max(raw_response / channel_max, 0.0)


# ---------------------------------------------------------------------------
# densities


def log_gauss2d(points: np.ndarray, mean: np.ndarray, variance: float) -> np.ndarray:
    """Log of the isotropic 2-D normal density at each point, vectorized."""
    if variance <= 0:
        raise ValidationError(f"variance must be positive, got {variance}")
    diff = np.asarray(points, dtype=np.float64) - np.asarray(mean, dtype=np.float64)
    sq = np.sum(diff * diff, axis=-1)
    return -sq / (2.0 * variance) - (LOG_TWO_PI + math.log(variance))


def gauss2d(point, mean, variance: float) -> float | np.ndarray:
    return np.exp(log_gauss2d(point, mean, variance))


# ---------------------------------------------------------------------------
# parent evidence and the collapsed form


@dataclass
class ParentEvidence:
    """Inferred positions, priors and variances of a node's usable parents."""

    positions: np.ndarray  # (k, 2) inferred parent positions on this image
    mus: np.ndarray        # (k, 2) parent prior positions
    variances: np.ndarray  # (k,)   parent spatial variances

    def __post_init__(self) -> None:
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 2)
        self.mus = np.asarray(self.mus, dtype=np.float64).reshape(-1, 2)
        self.variances = np.asarray(self.variances, dtype=np.float64).reshape(-1)
        k = len(self.variances)
        if k == 0:
            raise ValidationError("parent evidence must be nonempty")
        if self.positions.shape[0] != k or self.mus.shape[0] != k:
            raise ValidationError("evidence arrays must agree in length")
        if np.any(self.variances <= 0):
            raise ValidationError("parent variances must be positive")

    def __len__(self) -> int:
        return len(self.variances)

    @property
    def displacements(self) -> np.ndarray:
        """Per-parent observed displacement from its prior position."""
        return self.positions - self.mus


@dataclass(frozen=True)
class CollapsedGaussian:
    """Single Gaussian equal (up to a constant factor) to the parent product."""

    mean: np.ndarray
    variance: float


def collapse_parents(mu: np.ndarray, evidence: ParentEvidence) -> CollapsedGaussian:
    """Precision-weighted shift of mu and harmonic-mean variance."""
    inv = 1.0 / evidence.variances
    total = inv.sum()
    delta = (evidence.displacements * inv[:, None]).sum(axis=0) / total
    variance = len(evidence) / total
    return CollapsedGaussian(
        mean=np.asarray(mu, dtype=np.float64) + delta, variance=float(variance)
    )


def log_compat_parented(
    points: np.ndarray, mu: np.ndarray, evidence: ParentEvidence
) -> np.ndarray:
    """Geometric mean of parent-conditioned Gaussians, evaluated literally."""
    lam = 1.0 / len(evidence)
    mu = np.asarray(mu, dtype=np.float64)
    out = None
    for j in range(len(evidence)):
        anchor = mu + evidence.positions[j] - evidence.mus[j]
        term = lam * log_gauss2d(points, anchor, float(evidence.variances[j]))
        out = term if out is None else out + term
    return out


def log_compat_dummy(points: np.ndarray, mu: np.ndarray, variance: float) -> np.ndarray:
    """Compatibility of a dummy-parented node: its own prior Gaussian."""
    return log_gauss2d(points, mu, variance)


def node_compat(
    point,
    mu=None,
    sigma2: float | None = None,
    evidence: ParentEvidence | None = None,
    tau: float = 0.1,
    noise: bool = False,
):
    """Unnormalized node compatibility at `point` (the noise component is flat tau)."""
    if noise:
        scalar = np.asarray(point).ndim <= 1
        return tau if scalar else np.full(np.asarray(point).shape[:-1], tau)
    if evidence is not None:
        return np.exp(log_compat_parented(point, mu, evidence))
    if sigma2 is None:
        raise ConfigError("dummy-parented node needs its own sigma2")
    return np.exp(log_compat_dummy(point, mu, sigma2))


def resolve_evidence(
    parent_mus: np.ndarray,
    parent_variances: np.ndarray,
    parent_positions: Sequence[np.ndarray | None],
) -> ParentEvidence | float | None:
    """Evidence actually usable on one image.

    Parents without an inferred position are skipped.  Returns the surviving
    ParentEvidence, or the full-parent-set collapsed variance (float) when
    every parent is unassigned, or None when the node has no parents at all.
    """
    k = len(parent_variances)
    if k == 0:
        return None
    keep = [j for j, p in enumerate(parent_positions) if p is not None]
    if not keep:
        return float(k / np.sum(1.0 / np.asarray(parent_variances, dtype=np.float64)))
    return ParentEvidence(
        positions=np.stack([np.asarray(parent_positions[j]) for j in keep]),
        mus=np.asarray(parent_mus)[keep],
        variances=np.asarray(parent_variances)[keep],
    )


# ---------------------------------------------------------------------------
# mixture-level quantities


@dataclass
class NodeView:
    """Evaluation-ready view of one mixture component for one layer.

    evidence_by_image maps image_id to a ParentEvidence (parented), a float
    (all parents unassigned: dummy fallback with that variance), or None
    (no parents: dummy with the node's own sigma2).
    """

    mu: np.ndarray
    sigma2: float
    channel: int
    evidence_by_image: Mapping[str, ParentEvidence | float | None]

    def log_compat(self, image_id: str, points: np.ndarray) -> np.ndarray:
        ev = self.evidence_by_image.get(image_id)
        if isinstance(ev, ParentEvidence):
            return log_compat_parented(points, self.mu, ev)
        variance = self.sigma2 if ev is None else ev
        return log_compat_dummy(points, self.mu, variance)


def posterior(
    points: np.ndarray,
    log_compats: Sequence[np.ndarray],
    tau: float,
) -> np.ndarray:
    """Responsibilities over the channel's nodes plus the noise component.

    Rows of the result follow the order of `log_compats`, with the noise
    component appended last.  The constant prior 1/(N+1) cancels.  Shape is
    (n_points, n_nodes + 1); rows sum to one.
    """
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    rows = list(log_compats)
    noise_row = np.full(n, -np.inf if tau == 0 else math.log(tau))
    stack = np.vstack(rows + [noise_row]) if rows else noise_row[None, :]
    peak = stack.max(axis=0)
    degenerate = ~np.isfinite(peak)
    peak = np.where(degenerate, 0.0, peak)
    linear = np.exp(stack - peak)
    total = linear.sum(axis=0)
    if np.any(degenerate):
        log.warning(
            "all compatibilities vanished for %d entities; using uniform posterior",
            int(degenerate.sum()),
        )
        linear[:, degenerate] = 1.0
        total = linear.sum(axis=0)
    return (linear / total).T


def layer_log_likelihood(
    entities_by_image: Mapping[str, LayerEntities],
    nodes: Sequence[NodeView],
    tau: float,
) -> float:
    """Weighted data log-likelihood of one layer under the channel mixtures.

    Sum over images (in sorted image_id order, for run-to-run determinism)
    and entities of F(x) * log sum_V P(V) compat(p_x, V), with the uniform
    prior P(V) = 1/(N_d + 1) kept explicit.
    """
    by_channel: dict[int, list[NodeView]] = {}
    for view in nodes:
        by_channel.setdefault(view.channel, []).append(view)
    total = 0.0
    log_tau = -np.inf if tau == 0 else math.log(tau)
    for image_id in sorted(entities_by_image):
        ents = entities_by_image[image_id]
        for channel in range(ents.channels):
            points = ents.positions[channel]
            weights = ents.weights[channel]
            if len(weights) == 0:
                continue
            views = by_channel.get(channel, [])
            rows = [v.log_compat(image_id, points) for v in views]
            rows.append(np.full(len(weights), log_tau))
            stack = np.vstack(rows)
            peak = stack.max(axis=0)
            mix = peak + np.log(np.exp(stack - peak).sum(axis=0))
            mix -= math.log(len(views) + 1)
            total += float(np.dot(weights, mix))
    return total


def mu_gradient(
    entities_by_image: Mapping[str, LayerEntities],
    nodes: Sequence[NodeView],
    node_index: int,
    tau: float,
) -> np.ndarray:
    """Analytic d(layer log-likelihood)/d(mu) for one node.

    Equals sum_x F(x) q(V|x) (p_x - mu - Delta_I) / collapsed_variance with
    responsibilities taken at the current parameters; this is the direction
    the gradient-mode learner steps along.
    """
    target = nodes[node_index]
    channel_views = [v for v in nodes if v.channel == target.channel]
    row_of_target = channel_views.index(target)
    grad = np.zeros(2)
    for image_id in sorted(entities_by_image):
        ents = entities_by_image[image_id]
        points = ents.positions[target.channel]
        weights = ents.weights[target.channel]
        if len(weights) == 0:
            continue
        rows = [v.log_compat(image_id, points) for v in channel_views]
        q = posterior(points, rows, tau)[:, row_of_target]
        ev = target.evidence_by_image.get(image_id)
        if isinstance(ev, ParentEvidence):
            collapsed = collapse_parents(target.mu, ev)
            center, variance = collapsed.mean, collapsed.variance
        else:
            variance = target.sigma2 if ev is None else ev
            center = target.mu
        grad += (weights * q) @ (points - center) / variance
    return grad
