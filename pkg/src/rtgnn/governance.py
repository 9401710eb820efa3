"""Noise governance: loss-based labeled-node division, self-reinforcement,
pseudo-labeling, consistency regularization and the composite losses.

Selection steps work on plain probability arrays and produce index sets.
Loss terms are built on the tape from the two peers' probability tensors.
KL reference distributions (the first argument of each divergence) are
treated as constants: callers pass them as numpy arrays, and by default the
current values of the predictions are used.

Sign convention for the labeled and pseudo losses: the regularizer is added
to the cross-entropy, i.e. ``mean(zeta * CE) + lam * mean(reg)``, so that
minimizing the objective also minimizes the divergences.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import ndtensor as nd
from .gcn import argmax_rows


def _as_tensor(p) -> nd.Tensor:
    return p if isinstance(p, nd.Tensor) else nd.constant(p)


def _values(p) -> np.ndarray:
    return p.data if isinstance(p, nd.Tensor) else np.asarray(p, dtype=np.float64)


def _one_hot(labels, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((len(labels), num_classes))
    out[np.arange(len(labels)), labels] = 1.0
    return out


def _xlogx_rows(q: np.ndarray) -> np.ndarray:
    return (q * np.log(np.maximum(q, nd.LOG_FLOOR))).sum(axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# per-node loss terms


def mutual_loss(p1, p2, labels) -> nd.Tensor:
    """Column of -log(p1[i, y_i] * p2[i, y_i]) with the clamped log."""
    p1, p2 = _as_tensor(p1), _as_tensor(p2)
    onehot = nd.constant(_one_hot(labels, p1.shape[1]))
    picked = nd.mul(nd.row_sum(nd.mul(p1, onehot)), nd.row_sum(nd.mul(p2, onehot)))
    return nd.scale(nd.clamped_log(picked), -1.0)


def mutual_loss_values(p1, p2, labels) -> np.ndarray:
    p1, p2 = _values(p1), _values(p2)
    idx = np.arange(len(p1))
    labels = np.asarray(labels, dtype=np.int64)
    return -np.log(np.maximum(p1[idx, labels] * p2[idx, labels], nd.LOG_FLOOR))


def _kl_to(ref: np.ndarray, pred: nd.Tensor) -> nd.Tensor:
    """Row-wise KL(ref || pred) with ``ref`` held constant."""
    cross = nd.row_sum(nd.mul(nd.constant(ref), nd.clamped_log(pred)))
    return nd.sub(nd.constant(_xlogx_rows(ref)), cross)


def inter_view_reg(p1, p2, ref1=None, ref2=None) -> nd.Tensor:
    """Column of KL(p1 || p2) + KL(p2 || p1); each reference side is a constant."""
    p1, p2 = _as_tensor(p1), _as_tensor(p2)
    ref1 = p1.data if ref1 is None else np.asarray(ref1)
    ref2 = p2.data if ref2 is None else np.asarray(ref2)
    return nd.add(_kl_to(ref1, p2), _kl_to(ref2, p1))


def neighbor_weights(adjacency) -> np.ndarray:
    """Row-normalized edge weights; rows of isolated nodes stay zero."""
    adj = _values(adjacency)
    deg = adj.sum(axis=1, keepdims=True)
    return np.divide(adj, deg, out=np.zeros_like(adj), where=deg > 0)


def _intra_from_weights(p1: nd.Tensor, p2: nd.Tensor, weights: np.ndarray, ref1: np.ndarray,
                        ref2: np.ndarray) -> nd.Tensor:
    # sum_j a_ij KL(q_j || p_i) = sum_j a_ij sum_c q_jc log q_jc - sum_c (a q)_ic log p_ic
    total = None
    for pred, ref in ((p1, ref1), (p2, ref2)):
        target = weights @ ref
        const = weights @ _xlogx_rows(ref)
        term = nd.sub(nd.constant(const), nd.row_sum(nd.mul(nd.constant(target), nd.clamped_log(pred))))
        total = term if total is None else nd.add(total, term)
    return total


def intra_view_reg(p1, p2, adjacency, ref1=None, ref2=None) -> nd.Tensor:
    """Column of sum_j (A_ij / sum_k A_ik) [KL(p1_j || p1_i) + KL(p2_j || p2_i)].

    Neighbor rows and the edge weights are constants. Isolated nodes get 0.
    """
    p1, p2 = _as_tensor(p1), _as_tensor(p2)
    ref1 = p1.data if ref1 is None else np.asarray(ref1)
    ref2 = p2.data if ref2 is None else np.asarray(ref2)
    return _intra_from_weights(p1, p2, neighbor_weights(adjacency), ref1, ref2)


def regularizer(p1: nd.Tensor, p2: nd.Tensor, ids, weights: np.ndarray, ref1: np.ndarray,
                ref2: np.ndarray) -> nd.Tensor:
    """Column of inter- plus intra-view terms for the rows ``ids``."""
    ids = np.asarray(ids, dtype=np.int64)
    q1, q2 = nd.gather_rows(p1, ids), nd.gather_rows(p2, ids)
    inter = inter_view_reg(q1, q2, ref1[ids], ref2[ids])
    intra = _intra_from_weights(q1, q2, weights[ids], ref1, ref2)
    return nd.add(inter, intra)


# ---------------------------------------------------------------------------
# selection


def percentile(values, q: float) -> float:
    """Linear interpolation between order statistics at index (q/100)(n-1)."""
    return float(np.percentile(np.asarray(values, dtype=np.float64), q, method="linear"))


@dataclass(frozen=True, eq=False)
class DivisionResult:
    clean: np.ndarray
    noisy: np.ndarray
    th_epoch: float
    th_avg: float
    losses: np.ndarray


def divide(losses, t: int, t_max: int, ids=None) -> DivisionResult:
    """Small-loss split of the labeled nodes into clean and noisy candidates.

    A node is clean when its mutual loss is strictly below
    max(percentile(losses, 100 - 50 t / t_max), mean(losses)). If nothing
    qualifies (all losses equal) every node is clean.
    """
    losses = np.asarray(losses, dtype=np.float64)
    if losses.size == 0:
        raise ValueError("cannot divide an empty labeled set")
    if not 1 <= t <= t_max:
        raise ValueError(f"epoch index must satisfy 1 <= t <= t_max, got t={t}, t_max={t_max}")
    if not np.all(np.isfinite(losses)):
        raise ValueError("mutual losses must be finite")
    ids = np.arange(len(losses)) if ids is None else np.asarray(ids, dtype=np.int64)
    th_epoch = percentile(losses, 100.0 - 50.0 * t / t_max)
    th_avg = float(losses.mean())
    is_clean = losses < max(th_epoch, th_avg)
    if not is_clean.any():
        is_clean[:] = True
    return DivisionResult(ids[is_clean], ids[~is_clean], th_epoch, th_avg, losses)


@dataclass(frozen=True, eq=False)
class SelectedSet:
    """Nodes with a model-predicted target class and a per-node weight."""

    ids: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    labels: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    weights: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __len__(self) -> int:
        return len(self.ids)


def _agreeing_confidence(p1: np.ndarray, p2: np.ndarray, ids: np.ndarray):
    z1 = argmax_rows(p1[ids])
    z2 = argmax_rows(p2[ids])
    conf = np.sqrt(p1[ids, z1] * p2[ids, z1])
    return z1, z1 == z2, conf


def self_reinforce_threshold(t: int, t_max: int, num_classes: int) -> float:
    return 1.0 - (num_classes - 1) * t / (num_classes * t_max)


def select_self_reinforce(p1, p2, observed_labels, noisy_ids, t: int, t_max: int) -> SelectedSet:
    """Noisy candidates whose peers agree, disagree with the label, and are confident.

    The confidence sqrt(p1 p2) on the agreed class must exceed
    1 - (C-1) t / (C t_max); the weight is that confidence raised to 1 - t/t_max.
    """
    if t < 1:
        raise ValueError("epoch index t must be at least 1")
    p1, p2 = _values(p1), _values(p2)
    ids = np.asarray(noisy_ids, dtype=np.int64)
    if len(ids) == 0:
        return SelectedSet()
    z, agree, conf = _agreeing_confidence(p1, p2, ids)
    observed = np.asarray(observed_labels, dtype=np.int64)[ids]
    keep = agree & (z != observed) & (conf > self_reinforce_threshold(t, t_max, p1.shape[1]))
    mu = conf[keep] ** (1.0 - t / t_max)
    return SelectedSet(ids[keep], z[keep], mu)


def select_pseudo(p1, p2, unlabeled_ids, th_pse: float) -> SelectedSet:
    """Unlabeled nodes whose peers agree with confidence sqrt(p1 p2) > th_pse."""
    p1, p2 = _values(p1), _values(p2)
    if not 1.0 / p1.shape[1] < th_pse < 1.0:
        raise ValueError(f"th_pse must lie in (1/C, 1), got {th_pse}")
    ids = np.asarray(unlabeled_ids, dtype=np.int64)
    if len(ids) == 0:
        return SelectedSet()
    z, agree, conf = _agreeing_confidence(p1, p2, ids)
    keep = agree & (conf > th_pse)
    return SelectedSet(ids[keep], z[keep], conf[keep])


@dataclass(frozen=True, eq=False)
class GovernanceReport:
    t: int
    division: DivisionResult
    self_reinforce: SelectedSet
    pseudo: SelectedSet

    @property
    def labeled_ids(self) -> np.ndarray:
        return np.sort(np.concatenate([self.division.clean, self.division.noisy]))

    def noise_scores(self, flip_mask) -> tuple[float, float]:
        """Precision and recall of the noisy candidate set against true flips.

        Empty denominators score 0.
        """
        flipped = np.asarray(flip_mask, dtype=bool)
        noisy = self.division.noisy
        hits = int(flipped[noisy].sum())
        n_flipped = int(flipped[self.labeled_ids].sum())
        precision = hits / len(noisy) if len(noisy) else 0.0
        recall = hits / n_flipped if n_flipped else 0.0
        return precision, recall

    def to_json(self, flip_mask) -> str:
        precision, recall = self.noise_scores(flip_mask)
        return json.dumps({
            "t": self.t,
            "n_clean": len(self.division.clean),
            "n_noisy": len(self.division.noisy),
            "n_sr": len(self.self_reinforce),
            "n_pse": len(self.pseudo),
            "noise_precision": precision,
            "noise_recall": recall,
        })


def govern(p1, p2, observed_labels, labeled_ids, unlabeled_ids, t: int, t_max: int, th_pse: float,
           use_division: bool = True, use_self_reinforce: bool = True, use_pseudo: bool = True) -> GovernanceReport:
    """Run division, self-reinforcement and pseudo-label selection for one epoch."""
    p1, p2 = _values(p1), _values(p2)
    labeled_ids = np.asarray(labeled_ids, dtype=np.int64)
    observed = np.asarray(observed_labels, dtype=np.int64)
    losses = mutual_loss_values(p1[labeled_ids], p2[labeled_ids], observed[labeled_ids])
    if use_division:
        division = divide(losses, t, t_max, ids=labeled_ids)
    else:
        division = DivisionResult(labeled_ids, np.zeros(0, dtype=np.int64), np.inf, float(losses.mean()), losses)
    sr = SelectedSet()
    if use_division and use_self_reinforce:
        sr = select_self_reinforce(p1, p2, observed, division.noisy, t, t_max)
    pse = select_pseudo(p1, p2, unlabeled_ids, th_pse) if use_pseudo else SelectedSet()
    return GovernanceReport(t, division, sr, pse)


# ---------------------------------------------------------------------------
# composite losses


def labeled_targets(report: GovernanceReport, observed_labels, gamma: float):
    """Per labeled node: (ids, target class, zeta weight)."""
    observed = np.asarray(observed_labels, dtype=np.int64)
    ids = report.labeled_ids
    targets = observed[ids].copy()
    zeta = np.ones(len(ids))
    pos = {int(i): k for k, i in enumerate(ids)}
    for i in report.division.noisy:
        zeta[pos[int(i)]] = gamma
    for i, z, mu in zip(report.self_reinforce.ids, report.self_reinforce.labels, report.self_reinforce.weights):
        targets[pos[int(i)]] = z
        zeta[pos[int(i)]] = mu
    return ids, targets, zeta


def _weighted_mean_ce(p1: nd.Tensor, p2: nd.Tensor, ids, targets, weights) -> nd.Tensor:
    ce = mutual_loss(nd.gather_rows(p1, ids), nd.gather_rows(p2, ids), targets)
    return nd.scale(nd.sum_all(nd.mul(ce, nd.constant(np.asarray(weights, dtype=np.float64).reshape(-1, 1)))),
                    1.0 / len(ids))


def _mean_reg(p1, p2, ids, adjacency, lam, ref1, ref2, weights=None) -> nd.Tensor:
    if weights is None:
        weights = neighbor_weights(adjacency)
    reg = regularizer(p1, p2, ids, weights, ref1, ref2)
    return nd.scale(nd.sum_all(reg), lam / len(ids))


def labeled_loss(report: GovernanceReport, p1, p2, observed_labels, gamma: float, lam: float, adjacency,
                 ref1=None, ref2=None, weights=None) -> nd.Tensor:
    """Mean over labeled nodes of zeta * mutual CE on the chosen target, plus lam * mean reg.

    Clean nodes use their label with weight 1, self-reinforced nodes their
    agreed prediction with weight mu, the remaining noisy candidates their
    label with weight gamma. ``weights`` may carry precomputed
    :func:`neighbor_weights` of ``adjacency``.
    """
    p1, p2 = _as_tensor(p1), _as_tensor(p2)
    ids, targets, zeta = labeled_targets(report, observed_labels, gamma)
    loss = _weighted_mean_ce(p1, p2, ids, targets, zeta)
    if lam:
        ref1 = p1.data if ref1 is None else ref1
        ref2 = p2.data if ref2 is None else ref2
        loss = nd.add(loss, _mean_reg(p1, p2, ids, adjacency, lam, ref1, ref2, weights))
    return loss


def pseudo_loss(pseudo: SelectedSet, p1, p2, lam: float, adjacency, ref1=None, ref2=None,
                weights=None) -> nd.Tensor:
    """Mean over pseudo-labeled nodes of mutual CE on the pseudo-label plus lam * reg; 0 if none."""
    if len(pseudo) == 0:
        return nd.constant(0.0)
    p1, p2 = _as_tensor(p1), _as_tensor(p2)
    loss = _weighted_mean_ce(p1, p2, pseudo.ids, pseudo.labels, np.ones(len(pseudo)))
    if lam:
        ref1 = p1.data if ref1 is None else ref1
        ref2 = p2.data if ref2 is None else ref2
        loss = nd.add(loss, _mean_reg(p1, p2, pseudo.ids, adjacency, lam, ref1, ref2, weights))
    return loss


def total_loss(l_labeled, l_pse, l_rec, alpha: float):
    if isinstance(l_labeled, nd.Tensor):
        return nd.add(nd.add(l_labeled, _as_tensor(l_pse)), nd.scale(_as_tensor(l_rec), alpha))
    return l_labeled + l_pse + alpha * l_rec
