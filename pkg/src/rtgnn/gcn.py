"""Two-layer GCN classifiers, the peer pair, and checkpoint IO."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import ndtensor as nd

PEER_KEYS = ("p1_w1", "p1_w2", "p2_w1", "p2_w2")


def glorot_uniform(fan_in: int, fan_out: int, rng: np.random.Generator) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_gcn(feature_dim: int, hidden: int, num_classes: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    w1 = glorot_uniform(feature_dim, hidden, rng)
    w2 = glorot_uniform(hidden, num_classes, rng)
    return w1, w2


def gcn_forward(a_norm: nd.Tensor, features: nd.Tensor, w1: nd.Tensor, w2: nd.Tensor,
                dropout_mask: np.ndarray | None = None, propagated: nd.Tensor | None = None):
    """Return ``(logits, probs)``.

    H = relu(A X W1), dropout on H when a mask is given (training), then
    logits = A H W2. ``propagated`` may carry a shared ``A @ X``; it is used
    when the feature dimension does not exceed the hidden width, which is the
    cheaper association order.
    """
    if features.shape[1] != w1.shape[0]:
        raise nd.ShapeError(f"features have {features.shape[1]} columns but W1 expects {w1.shape[0]}")
    if features.shape[1] <= w1.shape[1]:
        ax = propagated if propagated is not None else nd.matmul(a_norm, features)
        pre = nd.matmul(ax, w1)
    else:
        pre = nd.matmul(a_norm, nd.matmul(features, w1))
    hidden = nd.dropout(nd.relu(pre), dropout_mask)
    logits = nd.matmul(a_norm, nd.matmul(hidden, w2))
    return logits, nd.row_softmax(logits)


def argmax_rows(probs: np.ndarray) -> np.ndarray:
    """Row argmax; ties resolve to the lowest class index."""
    return np.argmax(np.asarray(probs), axis=1)


@dataclass
class PeerState:
    params: dict[str, np.ndarray]
    p1: np.ndarray | None = None
    p2: np.ndarray | None = None

    @property
    def params_1(self) -> tuple[np.ndarray, np.ndarray]:
        return self.params["p1_w1"], self.params["p1_w2"]

    @property
    def params_2(self) -> tuple[np.ndarray, np.ndarray]:
        return self.params["p2_w1"], self.params["p2_w2"]


def init_peers(feature_dim: int, hidden: int, num_classes: int, rng1: np.random.Generator,
               rng2: np.random.Generator) -> dict[str, np.ndarray]:
    w1a, w2a = init_gcn(feature_dim, hidden, num_classes, rng1)
    w1b, w2b = init_gcn(feature_dim, hidden, num_classes, rng2)
    return {"p1_w1": w1a, "p1_w2": w2a, "p2_w1": w1b, "p2_w2": w2b}


def predict_probs(a_norm, features, w1, w2, propagated=None) -> np.ndarray:
    """Eval-mode class probabilities (no dropout, no tape)."""
    a = nd.constant(a_norm.data if isinstance(a_norm, nd.Tensor) else a_norm)
    x = nd.constant(features.data if isinstance(features, nd.Tensor) else features)
    if propagated is not None:
        propagated = nd.constant(propagated.data if isinstance(propagated, nd.Tensor) else propagated)
    _, probs = gcn_forward(a, x, nd.constant(w1), nd.constant(w2), propagated=propagated)
    return probs.data


def infer(a_norm, features, state: PeerState) -> np.ndarray:
    """Predicted class per node from the first peer."""
    return argmax_rows(predict_probs(a_norm, features, *state.params_1))


def save_checkpoint(path, params: dict[str, np.ndarray]) -> None:
    """JSON header ``{"d", "h", "C"}`` then little-endian float64 W1, W2 of peer 1, then peer 2."""
    d, h = params["p1_w1"].shape
    C = params["p1_w2"].shape[1]
    with open(path, "wb") as fh:
        fh.write((json.dumps({"d": d, "h": h, "C": C}) + "\n").encode("utf-8"))
        for key in PEER_KEYS:
            fh.write(np.ascontiguousarray(params[key], dtype="<f8").tobytes())


def load_checkpoint(path) -> dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    header, _, body = raw.partition(b"\n")
    meta = json.loads(header)
    d, h, C = meta["d"], meta["h"], meta["C"]
    shapes = {"p1_w1": (d, h), "p1_w2": (h, C), "p2_w1": (d, h), "p2_w2": (h, C)}
    expected = sum(r * c for r, c in shapes.values()) * 8
    if len(body) != expected:
        raise ValueError(f"checkpoint body has {len(body)} bytes, expected {expected}")
    values = np.frombuffer(body, dtype="<f8")
    out, offset = {}, 0
    for key in PEER_KEYS:
        r, c = shapes[key]
        out[key] = values[offset : offset + r * c].reshape(r, c).astype(np.float64)
        offset += r * c
    return out
