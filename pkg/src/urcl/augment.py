"""Spatio-temporal view perturbations for contrastive training.

Five families: drop nodes, drop edges, subgraph by random walk, add edges
between distant pairs, and time shifting (slice / warp / flip). Every
augmentation preserves the window shape (B, M, V, C) and the adjacency shape;
all randomness comes from an explicit generator.
"""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .exceptions import ContractError

logger = logging.getLogger(__name__)


class Augmentation(Enum):
    DROP_NODES = "dn"
    DROP_EDGES = "de"
    SUBGRAPH = "sg"
    ADD_EDGES = "ae"
    TIME_SLICE = "ts_slice"
    TIME_WARP = "ts_warp"
    TIME_FLIP = "ts_flip"


FAMILIES = (Augmentation.DROP_NODES, Augmentation.DROP_EDGES, Augmentation.SUBGRAPH,
            Augmentation.ADD_EDGES, "ts")
TIME_VARIANTS = (Augmentation.TIME_SLICE, Augmentation.TIME_WARP, Augmentation.TIME_FLIP)


@dataclass
class GraphSample:
    """A windowed observation batch together with its graph."""

    window: np.ndarray      # (B, M, V, C)
    adjacency: np.ndarray   # (V, V)
    directed: bool = False

    def copy(self) -> "GraphSample":
        return GraphSample(self.window.copy(), self.adjacency.copy(), self.directed)


@dataclass
class AugmentationParams:
    """Tunable knobs for the five augmentation families."""

    dn_ratio: float = 0.1
    de_ratio: float = 0.1
    de_threshold: float = 0.0   # resolve from edge-weight percentile per dataset
    sg_coverage: float = 0.8
    ae_ratio: float = 0.05
    ae_min_hops: int = 3
    ts_slice_len: int = 6


def _mask_nodes(sample: GraphSample, nodes: np.ndarray) -> GraphSample:
    out = sample.copy()
    if nodes.size:
        out.adjacency[nodes, :] = 0.0
        out.adjacency[:, nodes] = 0.0
        out.window[:, :, nodes, :] = 0.0
    return out


def drop_nodes(sample: GraphSample, ratio: float, rng: np.random.Generator) -> GraphSample:
    """Zero a uniform fraction of nodes: adjacency rows/columns and features."""
    if not 0 <= ratio < 1:
        raise ContractError(f"drop ratio must be in [0, 1), got {ratio}")
    num_nodes = sample.adjacency.shape[0]
    count = int(math.floor(ratio * num_nodes))
    if count == 0:
        return sample.copy()
    dropped = rng.choice(num_nodes, size=count, replace=False)
    return _mask_nodes(sample, dropped)


def drop_edges(sample: GraphSample, ratio: float, threshold: float,
               rng: np.random.Generator) -> GraphSample:
    """Sample a fraction of edges; remove the sampled ones weaker than threshold."""
    if not 0 <= ratio < 1:
        raise ContractError(f"drop ratio must be in [0, 1), got {ratio}")
    if threshold < 0:
        raise ContractError(f"threshold must be >= 0, got {threshold}")
    out = sample.copy()
    src, dst = np.nonzero(out.adjacency)
    count = int(math.floor(ratio * src.size))
    if count == 0:
        return out
    picked = rng.choice(src.size, size=count, replace=False)
    for index in picked:
        i, j = src[index], dst[index]
        if out.adjacency[i, j] < threshold:
            out.adjacency[i, j] = 0.0
    return out


def _undirected_neighbors(adjacency: np.ndarray) -> list[np.ndarray]:
    sym = (adjacency > 0) | (adjacency.T > 0)
    return [np.nonzero(sym[v])[0] for v in range(adjacency.shape[0])]


def _component(neighbors: list[np.ndarray], start: int) -> set[int]:
    seen = {start}
    queue = deque([start])
    while queue:
        node = queue.popleft()
        for nxt in neighbors[node]:
            if nxt not in seen:
                seen.add(int(nxt))
                queue.append(int(nxt))
    return seen


def sample_subgraph(sample: GraphSample, coverage: float,
                    rng: np.random.Generator) -> GraphSample:
    """Keep the nodes visited by a random walk, masking everything else.

    The walk starts at a uniform node and runs until ceil(coverage * |V|)
    distinct nodes are visited, restarting from a visited node when stuck. If
    the start's component is smaller than the quota, the component is kept.
    """
    if not 0 < coverage <= 1:
        raise ContractError(f"coverage must be in (0, 1], got {coverage}")
    num_nodes = sample.adjacency.shape[0]
    quota = int(math.ceil(coverage * num_nodes))
    start = int(rng.integers(num_nodes))
    neighbors = _undirected_neighbors(sample.adjacency)
    component = _component(neighbors, start)
    if len(component) < quota:
        logger.warning(
            "random walk component (%d nodes) smaller than coverage quota %d; keeping component",
            len(component), quota,
        )
        visited = component
    else:
        visited = {start}
        current = start
        while len(visited) < quota:
            options = neighbors[current]
            if options.size == 0:
                current = int(rng.choice(sorted(visited)))
                continue
            current = int(rng.choice(options))
            visited.add(current)
    masked = np.array(sorted(set(range(num_nodes)) - visited), dtype=np.int64)
    return _mask_nodes(sample, masked)


def _hop_distances(adjacency: np.ndarray) -> np.ndarray:
    """All-pairs unweighted hop distances on the undirected view (inf if unreachable)."""
    num_nodes = adjacency.shape[0]
    neighbors = _undirected_neighbors(adjacency)
    dist = np.full((num_nodes, num_nodes), np.inf)
    for source in range(num_nodes):
        dist[source, source] = 0
        queue = deque([source])
        while queue:
            node = queue.popleft()
            for nxt in neighbors[node]:
                if dist[source, nxt] == np.inf:
                    dist[source, nxt] = dist[source, node] + 1
                    queue.append(int(nxt))
    return dist


def add_edges(sample: GraphSample, ratio: float, min_hops: int,
              rng: np.random.Generator) -> GraphSample:
    """Connect distant node pairs with feature dot-product weights.

    Candidate pairs sit at least ``min_hops`` apart (unreachable counts as
    distant); floor(ratio * |V|) of them are picked uniformly. The per-node
    feature vector is the window mean over batch and time.
    """
    if not 0 <= ratio < 1:
        raise ContractError(f"add ratio must be in [0, 1), got {ratio}")
    out = sample.copy()
    num_nodes = out.adjacency.shape[0]
    wanted = int(math.floor(ratio * num_nodes))
    if wanted == 0:
        return out
    dist = _hop_distances(out.adjacency)
    candidates = [(i, j) for i in range(num_nodes) for j in range(i + 1, num_nodes)
                  if dist[i, j] >= min_hops]
    if not candidates:
        logger.warning("no node pairs at hop distance >= %d; add_edges is a no-op", min_hops)
        return out
    picked = rng.choice(len(candidates), size=min(wanted, len(candidates)), replace=False)
    features = out.window.mean(axis=(0, 1))   # (V, C)
    for index in picked:
        i, j = candidates[index]
        weight = float(features[i] @ features[j])
        out.adjacency[i, j] = weight
        if not out.directed:
            out.adjacency[j, i] = weight
    return out


def time_shifting(sample: GraphSample, variant: Augmentation, slice_len: int,
                  rng: np.random.Generator) -> GraphSample:
    """Slice, warp, or flip the window along the time axis.

    Slice keeps a uniformly placed contiguous run of ``slice_len`` frames and
    repeats the last kept frame to restore the window length; warp stretches
    the slice back to full length by linear interpolation; flip reverses time.
    """
    if variant not in TIME_VARIANTS:
        raise ContractError(f"unknown time-shifting variant {variant}")
    out = sample.copy()
    horizon = out.window.shape[1]
    if variant is Augmentation.TIME_FLIP:
        out.window = out.window[:, ::-1].copy()
        return out
    if not 2 <= slice_len <= horizon:
        raise ContractError(f"slice length {slice_len} outside [2, {horizon}]")
    start = int(rng.integers(0, horizon - slice_len + 1))
    sliced = out.window[:, start:start + slice_len]
    if variant is Augmentation.TIME_SLICE:
        pad = np.repeat(sliced[:, -1:], horizon - slice_len, axis=1)
        out.window = np.concatenate([sliced, pad], axis=1)
        return out
    # warp: linear interpolation of the slice back to the full horizon
    positions = np.linspace(0.0, slice_len - 1, num=horizon)
    lower = np.floor(positions).astype(np.int64)
    upper = np.minimum(lower + 1, slice_len - 1)
    frac = (positions - lower).reshape(1, horizon, 1, 1)
    out.window = (1.0 - frac) * sliced[:, lower] + frac * sliced[:, upper]
    return out


def draw_view_kinds(rng: np.random.Generator) -> tuple[Augmentation, Augmentation]:
    """Two distinct families without replacement; the time family then picks a variant."""
    picks = rng.choice(len(FAMILIES), size=2, replace=False)
    kinds = []
    for index in picks:
        family = FAMILIES[index]
        if family == "ts":
            kinds.append(TIME_VARIANTS[int(rng.integers(len(TIME_VARIANTS)))])
        else:
            kinds.append(family)
    return kinds[0], kinds[1]


def apply_augmentation(sample: GraphSample, kind: Augmentation,
                       params: AugmentationParams, rng: np.random.Generator) -> GraphSample:
    if kind is Augmentation.DROP_NODES:
        return drop_nodes(sample, params.dn_ratio, rng)
    if kind is Augmentation.DROP_EDGES:
        return drop_edges(sample, params.de_ratio, params.de_threshold, rng)
    if kind is Augmentation.SUBGRAPH:
        return sample_subgraph(sample, params.sg_coverage, rng)
    if kind is Augmentation.ADD_EDGES:
        return add_edges(sample, params.ae_ratio, params.ae_min_hops, rng)
    return time_shifting(sample, kind, params.ts_slice_len, rng)


def random_view_pair(sample: GraphSample, params: AugmentationParams,
                     rng: np.random.Generator) -> tuple[GraphSample, GraphSample]:
    """Apply two independently drawn, distinct perturbations to the sample."""
    kind1, kind2 = draw_view_kinds(rng)
    return (apply_augmentation(sample, kind1, params, rng),
            apply_augmentation(sample, kind2, params, rng))


def edge_weight_threshold(adjacency: np.ndarray, percentile: float = 10.0) -> float:
    """Default drop-edges threshold: a low percentile of positive edge weights."""
    weights = adjacency[adjacency > 0]
    if weights.size == 0:
        return 0.0
    return float(np.percentile(weights, percentile))
