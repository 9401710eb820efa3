"""Edge predictor and augmented adjacency linking labeled and unlabeled nodes.

Candidate partners come from an exact cosine k-NN over raw features across
the labeled/unlabeled partition. A GCN encoder embeds the nodes; the weight of
a pair is the non-negative cosine similarity of its embeddings. Candidate pairs
whose weight exceeds ``tau`` are added to the graph with that weight.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ndtensor as nd


@dataclass(frozen=True, eq=False)
class CandidateSet:
    lists: tuple[np.ndarray, ...]
    k: int

    def pairs(self) -> np.ndarray:
        """Unique unordered candidate pairs as rows ``(i, j)`` with ``i < j``."""
        rows = [np.column_stack([np.full(len(c), i), c]) for i, c in enumerate(self.lists) if len(c)]
        if not rows:
            return np.zeros((0, 2), dtype=np.int64)
        both = np.concatenate(rows).astype(np.int64)
        lo = np.minimum(both[:, 0], both[:, 1])
        hi = np.maximum(both[:, 0], both[:, 1])
        return np.unique(np.column_stack([lo, hi]), axis=0)


def cosine_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """1 - cos for all row pairs; zero-norm rows have similarity 0."""
    na = np.linalg.norm(a, axis=1, keepdims=True)
    nb = np.linalg.norm(b, axis=1, keepdims=True)
    an = np.divide(a, na, out=np.zeros_like(a, dtype=np.float64), where=na >= nd.NORM_FLOOR)
    bn = np.divide(b, nb, out=np.zeros_like(b, dtype=np.float64), where=nb >= nd.NORM_FLOOR)
    return 1.0 - an @ bn.T


def generate_candidates(features, labeled_ids, k: int, adjacency=None) -> CandidateSet:
    """Top-``k`` nearest nodes of the opposite partition for every node.

    Ties in distance go to the lower node id. Existing neighbors (when an
    adjacency is given) are excluded before ranking.
    """
    if k < 1:
        raise ValueError(f"k must be at least 1, got {k}")
    features = np.asarray(features, dtype=np.float64)
    n = features.shape[0]
    labeled = np.zeros(n, dtype=bool)
    labeled[np.asarray(labeled_ids, dtype=np.int64)] = True
    lab = np.flatnonzero(labeled)
    unl = np.flatnonzero(~labeled)
    if len(lab) == 0 or len(unl) == 0:
        raise ValueError("both the labeled and unlabeled partitions must be non-empty")

    dist = cosine_distances(features[lab], features[unl])
    if adjacency is not None:
        linked = np.asarray(adjacency)[np.ix_(lab, unl)] > 0
        dist = np.where(linked, np.inf, dist)

    lists: list[np.ndarray] = [np.zeros(0, dtype=np.int64)] * n
    for block, own, other in ((dist, lab, unl), (dist.T, unl, lab)):
        order = np.argsort(block, axis=1, kind="stable")[:, :k]
        for row, node in enumerate(own):
            picked = order[row]
            picked = picked[np.isfinite(block[row, picked])]
            lists[node] = other[picked]
    return CandidateSet(tuple(lists), k)


def init_encoder(feature_dim: int, hidden: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
    from .gcn import glorot_uniform

    return {
        "enc_w1": glorot_uniform(feature_dim, hidden, rng),
        "enc_w2": glorot_uniform(hidden, hidden, rng),
    }


def encode(a_norm: nd.Tensor, features: nd.Tensor, w1: nd.Tensor, w2: nd.Tensor, propagated=None) -> nd.Tensor:
    """Two-layer GCN embedding on the original graph.

    ``propagated`` may carry a precomputed ``a_norm @ features``.
    """
    ax = propagated if propagated is not None else nd.matmul(a_norm, features)
    hidden = nd.relu(nd.matmul(ax, w1))
    return nd.matmul(a_norm, nd.matmul(hidden, w2))


def cosine_matrix(z: nd.Tensor) -> nd.Tensor:
    zn = nd.row_normalize(z)
    return nd.matmul(zn, nd.transpose(zn))


def edge_weight(z_i, z_j) -> float:
    z_i = np.asarray(z_i, dtype=np.float64)
    z_j = np.asarray(z_j, dtype=np.float64)
    if z_i.shape != z_j.shape:
        raise ValueError(f"embedding lengths differ: {z_i.shape} vs {z_j.shape}")
    ni, nj = np.linalg.norm(z_i), np.linalg.norm(z_j)
    if ni < nd.NORM_FLOOR or nj < nd.NORM_FLOOR:
        return 0.0
    return max(float(z_i @ z_j) / (ni * nj), 0.0)


def positive_pairs(edges: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Both orientations of every edge, so each endpoint contributes its term."""
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    return np.concatenate([edges[:, 0], edges[:, 1]]), np.concatenate([edges[:, 1], edges[:, 0]])


def sample_negatives(adjacency: np.ndarray, n_neg: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """``n_neg`` uniform non-neighbors per node (with replacement, never self).

    Nodes adjacent to every other node get no negatives.
    """
    n = adjacency.shape[0]
    if n_neg <= 0 or n < 2:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    blocked = (adjacency > 0) | np.eye(n, dtype=bool)
    eligible = np.flatnonzero(~blocked.all(axis=1))
    src = np.repeat(eligible, n_neg)
    dst = rng.integers(0, n, size=len(src))
    bad = blocked[src, dst]
    while bad.any():
        dst[bad] = rng.integers(0, n, size=int(bad.sum()))
        bad = blocked[src, dst]
    return src, dst


def reconstruction_loss(similarity: nd.Tensor, positives, negatives) -> nd.Tensor:
    """Sum of (w - 1)^2 over positive pairs plus w^2 over sampled negatives.

    With ``n_neg`` samples per node, ``n_neg * mean(w^2)`` over a node's
    samples is just their sum, so negatives enter unaveraged.
    """
    terms = []
    if len(positives[0]):
        w = nd.relu(nd.take_entries(similarity, *positives))
        gap = nd.add(w, -1.0)
        terms.append(nd.sum_all(nd.mul(gap, gap)))
    if len(negatives[0]):
        w = nd.relu(nd.take_entries(similarity, *negatives))
        terms.append(nd.sum_all(nd.mul(w, w)))
    if not terms:
        return nd.constant(0.0)
    total = terms[0]
    for t in terms[1:]:
        total = nd.add(total, t)
    return total


@dataclass(frozen=True, eq=False)
class AugmentedAdjacency:
    matrix: nd.Tensor
    added_pairs: np.ndarray
    added_weights: np.ndarray

    @property
    def num_added(self) -> int:
        return len(self.added_pairs)


def select_pairs(similarity: np.ndarray, candidate_pairs: np.ndarray, tau: float) -> np.ndarray:
    if len(candidate_pairs) == 0:
        return candidate_pairs
    w = similarity[candidate_pairs[:, 0], candidate_pairs[:, 1]]
    return candidate_pairs[w > tau]


def build_augmented(adjacency: np.ndarray, candidate_pairs: np.ndarray, similarity: nd.Tensor, tau: float,
                    selected: np.ndarray | None = None, differentiable: bool = True) -> AugmentedAdjacency:
    """Original edges at weight 1 plus candidate pairs whose weight exceeds ``tau``.

    Candidate pairs never coincide with original edges. The result is
    symmetric: a pair accepted from either endpoint's list appears in both
    orientations. ``selected`` overrides the threshold test with a fixed pair set.
    """
    if not 0.0 <= tau < 1.0:
        raise ValueError(f"tau must lie in [0, 1), got {tau}")
    n = adjacency.shape[0]
    if selected is None:
        selected = select_pairs(similarity.data, candidate_pairs, tau)
    selected = np.asarray(selected, dtype=np.int64).reshape(-1, 2)
    if len(selected) and np.any(adjacency[selected[:, 0], selected[:, 1]] > 0):
        raise ValueError("candidate pairs must not duplicate existing edges")

    mask = np.zeros((n, n))
    mask[selected[:, 0], selected[:, 1]] = 1.0
    mask[selected[:, 1], selected[:, 0]] = 1.0
    sim = similarity if differentiable else similarity.detach()
    matrix = nd.add(nd.mul(sim, nd.constant(mask)), nd.constant(adjacency))
    weights = similarity.data[selected[:, 0], selected[:, 1]].copy()
    return AugmentedAdjacency(matrix, selected, weights)
