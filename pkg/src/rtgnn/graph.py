"""Graph container, adjacency normalization, splits, SBM synthesis and dataset IO."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import ndtensor as nd


class GraphFormatError(ValueError):
    """Dataset files are missing or inconsistent."""


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected, unweighted graph with node features and class labels.

    ``edges`` holds each undirected edge once as a row ``(i, j)`` with
    ``i < j``, sorted lexicographically.
    """

    num_nodes: int
    edges: np.ndarray
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    _adjacency: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        features = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        n = self.num_nodes
        if features.ndim != 2 or features.shape[0] != n:
            raise GraphFormatError(f"features must have {n} rows, got shape {features.shape}")
        if labels.shape != (n,):
            raise GraphFormatError(f"labels must have {n} entries, got shape {labels.shape}")
        if self.num_classes < 2:
            raise GraphFormatError(f"need at least two classes, got {self.num_classes}")
        if n and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise GraphFormatError("label out of range")
        if len(edges):
            if edges.min() < 0 or edges.max() >= n:
                raise GraphFormatError("edge endpoint out of range")
            if np.any(edges[:, 0] == edges[:, 1]):
                raise GraphFormatError("self-loop edges are not allowed")
        edges = _canonical_edges(edges)
        for arr in (edges, features, labels):
            arr.flags.writeable = False
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @property
    def adjacency(self) -> np.ndarray:
        """Dense symmetric binary adjacency (cached, read-only)."""
        if self._adjacency is None:
            adj = np.zeros((self.num_nodes, self.num_nodes))
            adj[self.edges[:, 0], self.edges[:, 1]] = 1.0
            adj[self.edges[:, 1], self.edges[:, 0]] = 1.0
            adj.flags.writeable = False
            object.__setattr__(self, "_adjacency", adj)
        return self._adjacency

    def same_as(self, other: Graph) -> bool:
        return (
            self.num_nodes == other.num_nodes
            and self.num_classes == other.num_classes
            and np.array_equal(self.edges, other.edges)
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.labels, other.labels)
        )


def _canonical_edges(edges: np.ndarray) -> np.ndarray:
    if len(edges) == 0:
        return np.zeros((0, 2), dtype=np.int64)
    lo = np.minimum(edges[:, 0], edges[:, 1])
    hi = np.maximum(edges[:, 0], edges[:, 1])
    return np.unique(np.stack([lo, hi], axis=1), axis=0)


@dataclass(frozen=True)
class Split:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    def __post_init__(self):
        sets = [set(map(int, ids)) for ids in (self.train, self.val, self.test)]
        if sets[0] & sets[1] or sets[0] & sets[2] or sets[1] & sets[2]:
            raise ValueError("split sets must be disjoint")


def normalize_adjacency(adj, validate: bool = True) -> nd.Tensor:
    """Renormalized propagation matrix D^-1/2 (A + I) D^-1/2.

    Accepts a numpy array (constant result) or a Tensor, in which case the
    result stays differentiable with respect to its entries. Degrees are
    weighted row sums of A + I. ``validate=False`` skips the O(n^2) input
    checks for matrices that are symmetric by construction.
    """
    if isinstance(adj, nd.Tensor):
        values = adj.data
    else:
        values = np.asarray(adj, dtype=np.float64)
    n = values.shape[0]
    if values.shape != (n, n):
        raise ValueError(f"adjacency must be square, got {values.shape}")
    if validate:
        _check_adjacency(values)

    if not isinstance(adj, nd.Tensor):
        with_loops = values + np.eye(n)
        r = with_loops.sum(axis=1, keepdims=True) ** -0.5
        return nd.constant(with_loops * r * r.T)

    with_loops = nd.add(adj, nd.constant(np.eye(n)))
    inv_sqrt_deg = nd.power(nd.row_sum(with_loops), -0.5)
    return nd.scale_rows_cols(with_loops, inv_sqrt_deg)


def _check_adjacency(values: np.ndarray) -> None:
    if not np.allclose(values, values.T, rtol=0.0, atol=1e-12):
        raise ValueError("adjacency must be symmetric")
    if np.any(values < 0):
        raise ValueError("adjacency must be non-negative")
    if np.any(np.diag(values) != 0):
        raise ValueError("adjacency must have a zero diagonal")


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def make_split(num_nodes: int, train_frac: float, val_frac: float, seed) -> Split:
    """Random train/val/test split; sizes rounded to nearest, remainder to test."""
    if not (0 < train_frac < 1 and 0 <= val_frac < 1 and train_frac + val_frac < 1):
        raise ValueError(f"invalid split fractions train={train_frac}, val={val_frac}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    n_train = min(_round_half_up(train_frac * num_nodes), num_nodes)
    n_val = min(_round_half_up(val_frac * num_nodes), num_nodes - n_train)
    perm = rng.permutation(num_nodes)
    return Split(
        train=np.sort(perm[:n_train]),
        val=np.sort(perm[n_train : n_train + n_val]),
        test=np.sort(perm[n_train + n_val :]),
    )


def generate_sbm(
    num_nodes: int,
    num_classes: int,
    p_in: float,
    p_out: float,
    feature_dim: int,
    feature_noise: float,
    seed,
) -> Graph:
    """Planted-partition SBM with one-hot class centroids plus Gaussian feature noise."""
    if not 0.0 <= p_out < p_in <= 1.0:
        raise ValueError(f"need 0 <= p_out < p_in <= 1, got p_in={p_in}, p_out={p_out}")
    if feature_dim < num_classes:
        raise ValueError("feature_dim must be at least num_classes for one-hot centroids")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)

    labels = (np.arange(num_nodes) * num_classes) // num_nodes
    rows, cols = np.triu_indices(num_nodes, k=1)
    same = labels[rows] == labels[cols]
    prob = np.where(same, p_in, p_out)
    keep = rng.random(len(rows)) < prob
    edges = np.stack([rows[keep], cols[keep]], axis=1)

    features = np.zeros((num_nodes, feature_dim))
    features[np.arange(num_nodes), labels] = 1.0
    features += feature_noise * rng.standard_normal((num_nodes, feature_dim))
    return Graph(num_nodes, edges, features, labels, num_classes)


def load_graph(dataset_dir) -> Graph:
    """Read ``edges.txt``, ``features.csv`` and ``labels.csv`` from a directory."""
    root = Path(dataset_dir)
    paths = {name: root / name for name in ("edges.txt", "features.csv", "labels.csv")}
    for name, path in paths.items():
        if not path.is_file():
            raise GraphFormatError(f"missing dataset file: {path}")

    features = np.loadtxt(paths["features.csv"], delimiter=",", dtype=np.float64, ndmin=2)
    labels = np.loadtxt(paths["labels.csv"], dtype=np.int64, ndmin=1)
    if features.shape[0] != labels.shape[0]:
        raise GraphFormatError(
            f"features.csv has {features.shape[0]} rows but labels.csv has {labels.shape[0]}"
        )
    n = labels.shape[0]
    pairs = []
    for lineno, line in enumerate(paths["edges.txt"].read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 2:
            raise GraphFormatError(f"edges.txt line {lineno}: expected 'src dst', got {line!r}")
        pairs.append((int(parts[0]), int(parts[1])))
    edges = np.array(pairs, dtype=np.int64).reshape(-1, 2)
    if len(edges) and np.any(edges[:, 0] == edges[:, 1]):
        bad = edges[edges[:, 0] == edges[:, 1]][0]
        raise GraphFormatError(f"self-loop edge {bad[0]} {bad[1]} in edges.txt")
    if n and (labels.min() < 0):
        raise GraphFormatError("negative label in labels.csv")
    num_classes = max(int(labels.max()) + 1, 2) if n else 2
    return Graph(n, edges, features, labels, num_classes)


def save_graph(graph: Graph, dataset_dir) -> Path:
    root = Path(dataset_dir)
    root.mkdir(parents=True, exist_ok=True)
    with open(root / "edges.txt", "w", encoding="utf-8") as fh:
        for i, j in graph.edges:
            fh.write(f"{i} {j}\n")
    with open(root / "features.csv", "w", encoding="utf-8") as fh:
        for row in graph.features:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
    with open(root / "labels.csv", "w", encoding="utf-8") as fh:
        for y in graph.labels:
            fh.write(f"{y}\n")
    return root
