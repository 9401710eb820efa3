"""Training loop: augmentation, peer GCNs, governance losses and Adam.

Each epoch builds one objective. Everything that the objective treats as
fixed (dropout masks, sampled negatives, the accepted augmentation pairs,
the governance sets, the KL reference distributions and the intra-view edge
weights) is collected in an :class:`EpochSnapshot`. Re-evaluating
:func:`objective` with the same snapshot gives a smooth function of the
parameters whose gradient is exactly what :func:`train` applies, which is
what the finite-difference checks exercise.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import augment, gcn, governance
from . import ndtensor as nd
from .graph import Graph, Split, normalize_adjacency
from .noise import NoisyLabeling
from .seeding import substream

logger = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    lr: float = 0.001
    weight_decay: float = 5e-4
    dropout: float = 0.5
    hidden: int = 128
    encoder_hidden: int = 64
    k: int = 25
    tau: float = 0.05
    n_neg: int = 100
    alpha: float = 0.03
    lam: float = 0.1
    gamma: float = 0.1
    th_pse: float = 0.9
    ld: bool = True
    sr: bool = True
    pl: bool = True
    cr: bool = True
    ga: bool = True
    aug_grad: bool = True
    tie_peers: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be positive")
        if self.n_neg < 0:
            raise ValueError("n_neg must be non-negative")
        if not 0.0 <= self.tau < 1.0:
            raise ValueError("tau must lie in [0, 1)")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")

    @classmethod
    def vanilla(cls, **overrides) -> TrainConfig:
        """Plain peer-GCN cross-entropy training: every governance module and augmentation off."""
        base = dict(ld=False, sr=False, pl=False, cr=False, ga=False)
        base.update(overrides)
        return cls(**base)


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState, lr: float,
              weight_decay: float = 0.0, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One bias-corrected Adam update with L2 weight decay folded into the gradient.

    Returns new parameter and state objects; the inputs are left untouched.
    """
    step = state.step + 1
    new_params, new_m, new_v = {}, {}, {}
    for key, value in params.items():
        g = grads.get(key)
        if g is None:
            g = np.zeros_like(value)
        if g.shape != value.shape:
            raise ValueError(f"gradient for {key} has shape {g.shape}, parameter has {value.shape}")
        g = g + weight_decay * value
        m = beta1 * state.m.get(key, np.zeros_like(value)) + (1.0 - beta1) * g
        v = beta2 * state.v.get(key, np.zeros_like(value)) + (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1**step)
        v_hat = v / (1.0 - beta2**step)
        new_params[key] = value - lr * m_hat / (np.sqrt(v_hat) + eps)
        new_m[key], new_v[key] = m, v
    return new_params, AdamState(step, new_m, new_v)


def evaluate(predictions, ids, reference_labels) -> float:
    """Fraction of ``ids`` whose predicted class equals the reference label."""
    ids = np.asarray(ids, dtype=np.int64)
    if len(ids) == 0:
        raise ValueError("cannot evaluate on an empty id set")
    predictions = np.asarray(predictions)
    reference_labels = np.asarray(reference_labels)
    return float(np.mean(predictions[ids] == reference_labels[ids]))


# ---------------------------------------------------------------------------
# problem setup


@dataclass(frozen=True, eq=False)
class Problem:
    """Per-run constants shared by every epoch."""

    graph: Graph
    labeling: NoisyLabeling
    split: Split
    config: TrainConfig
    features: nd.Tensor
    adjacency: np.ndarray
    a_norm_orig: nd.Tensor
    ax_orig: nd.Tensor
    candidate_pairs: np.ndarray
    positives: tuple[np.ndarray, np.ndarray]
    unlabeled: np.ndarray

    @property
    def labeled(self) -> np.ndarray:
        return self.split.train


def prepare(graph: Graph, labeling: NoisyLabeling, split: Split, config: TrainConfig) -> Problem:
    missing = labeling.observed[split.train] < 0
    if missing.any():
        raise ValueError("every training node needs an observed label")
    x = nd.constant(graph.features)
    adjacency = graph.adjacency
    a_norm = normalize_adjacency(adjacency)
    unlabeled = np.setdiff1d(np.arange(graph.num_nodes), split.train)
    if config.ga:
        candidates = augment.generate_candidates(graph.features, split.train, config.k, adjacency)
        pairs = candidates.pairs()
    else:
        pairs = np.zeros((0, 2), dtype=np.int64)
    return Problem(
        graph=graph,
        labeling=labeling,
        split=split,
        config=config,
        features=x,
        adjacency=adjacency,
        a_norm_orig=a_norm,
        ax_orig=nd.matmul(a_norm, x),
        candidate_pairs=pairs,
        positives=augment.positive_pairs(graph.edges),
        unlabeled=unlabeled,
    )


def init_params(problem: Problem) -> dict[str, np.ndarray]:
    cfg = problem.config
    d, C = problem.graph.feature_dim, problem.graph.num_classes
    rng1 = substream(cfg.seed, "init/peer1")
    rng2 = substream(cfg.seed, "init/peer1" if cfg.tie_peers else "init/peer2")
    params = gcn.init_peers(d, cfg.hidden, C, rng1, rng2)
    if cfg.ga:
        params.update(augment.init_encoder(d, cfg.encoder_hidden, substream(cfg.seed, "init/encoder")))
    return params


# ---------------------------------------------------------------------------
# objective


@dataclass(frozen=True, eq=False)
class EpochSnapshot:
    mask1: np.ndarray | None = None
    mask2: np.ndarray | None = None
    negatives: tuple[np.ndarray, np.ndarray] = (np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64))
    selected: np.ndarray | None = None
    report: governance.GovernanceReport | None = None
    ref1: np.ndarray | None = None
    ref2: np.ndarray | None = None
    reg_adjacency: np.ndarray | None = None

    @property
    def complete(self) -> bool:
        return all(getattr(self, f.name) is not None for f in fields(self) if f.name not in ("mask1", "mask2"))


def draw_randomness(problem: Problem, dropout_rng: np.random.Generator,
                    negative_rng: np.random.Generator) -> EpochSnapshot:
    cfg = problem.config
    shape = (problem.graph.num_nodes, cfg.hidden)
    mask1 = mask2 = None
    if cfg.dropout > 0:
        mask1 = nd.dropout_mask(shape, cfg.dropout, dropout_rng)
        mask2 = mask1 if cfg.tie_peers else nd.dropout_mask(shape, cfg.dropout, dropout_rng)
    negatives = EpochSnapshot().negatives
    if cfg.ga:
        negatives = augment.sample_negatives(problem.adjacency, cfg.n_neg, negative_rng)
    return EpochSnapshot(mask1=mask1, mask2=mask2, negatives=negatives)


@dataclass(eq=False)
class ObjectiveResult:
    total: nd.Tensor
    labeled: nd.Tensor
    pseudo: nd.Tensor
    rec: nd.Tensor
    leaves: dict[str, nd.Tensor]
    snapshot: EpochSnapshot
    num_added: int
    a_norm: nd.Tensor
    ax: nd.Tensor | None


def _augmented_adjacency(problem: Problem, leaves, selected=None, differentiable=True):
    cfg = problem.config
    z = augment.encode(problem.a_norm_orig, problem.features, leaves["enc_w1"], leaves["enc_w2"],
                       propagated=problem.ax_orig)
    sim = augment.cosine_matrix(z)
    aug = augment.build_augmented(problem.adjacency, problem.candidate_pairs, sim, cfg.tau,
                                  selected=selected, differentiable=differentiable)
    return sim, aug


def objective(params: dict[str, np.ndarray], problem: Problem, t: int,
              snapshot: EpochSnapshot | None = None) -> ObjectiveResult:
    """Build the epoch-``t`` objective on a fresh tape.

    Missing snapshot fields are filled from this evaluation; the returned
    snapshot is complete and reproduces the same objective when passed back.
    """
    cfg = problem.config
    snap = snapshot or EpochSnapshot()
    leaves = {k: nd.parameter(v) for k, v in params.items()}

    num_added = 0
    if cfg.ga:
        sim, aug = _augmented_adjacency(problem, leaves, snap.selected, cfg.aug_grad)
        l_rec = augment.reconstruction_loss(sim, problem.positives, snap.negatives)
        adj_hat = aug.matrix
        selected = aug.added_pairs
        num_added = aug.num_added
    else:
        adj_hat = nd.constant(problem.adjacency)
        l_rec = nd.constant(0.0)
        selected = np.zeros((0, 2), dtype=np.int64)

    x = problem.features
    if cfg.ga:
        a_norm = normalize_adjacency(adj_hat, validate=False)
        ax = nd.matmul(a_norm, x) if x.shape[1] <= cfg.hidden else None
    else:
        a_norm, ax = problem.a_norm_orig, problem.ax_orig
    _, p1 = gcn.gcn_forward(a_norm, x, leaves["p1_w1"], leaves["p1_w2"], snap.mask1, ax)
    _, p2 = gcn.gcn_forward(a_norm, x, leaves["p2_w1"], leaves["p2_w2"], snap.mask2, ax)

    observed = problem.labeling.observed
    report = snap.report
    if report is None:
        report = governance.govern(p1.data, p2.data, observed, problem.labeled, problem.unlabeled, t,
                                   cfg.epochs, cfg.th_pse, cfg.ld, cfg.sr, cfg.pl)
    ref1 = p1.data if snap.ref1 is None else snap.ref1
    ref2 = p2.data if snap.ref2 is None else snap.ref2
    reg_adj = adj_hat.data if snap.reg_adjacency is None else snap.reg_adjacency

    lam = cfg.lam if cfg.cr else 0.0
    weights = governance.neighbor_weights(reg_adj) if lam else None
    l_lab = governance.labeled_loss(report, p1, p2, observed, cfg.gamma, lam, reg_adj, ref1, ref2, weights)
    l_pse = governance.pseudo_loss(report.pseudo, p1, p2, lam, reg_adj, ref1, ref2, weights)
    total = governance.total_loss(l_lab, l_pse, l_rec, cfg.alpha if cfg.ga else 0.0)

    filled = replace(snap, selected=selected, report=report, ref1=ref1, ref2=ref2, reg_adjacency=reg_adj)
    return ObjectiveResult(total, l_lab, l_pse, l_rec, leaves, filled, num_added, a_norm, ax)


def objective_value(params, problem, t, snapshot, part: str = "total") -> float:
    return getattr(objective(params, problem, t, snapshot), part).item()


def objective_grad(params, problem, t, snapshot, part: str = "total") -> dict[str, np.ndarray]:
    res = objective(params, problem, t, snapshot)
    grads = nd.backward(getattr(res, part))
    return {k: grads.get(leaf, np.zeros_like(leaf.data)) for k, leaf in res.leaves.items()}


def eval_graph(params: dict[str, np.ndarray], problem: Problem):
    """Normalized propagation matrix (and shared A X) of the current augmented graph."""
    if not problem.config.ga:
        return problem.a_norm_orig, problem.ax_orig
    consts = {k: nd.constant(v) for k, v in params.items()}
    _, aug = _augmented_adjacency(problem, consts)
    a_norm = normalize_adjacency(aug.matrix, validate=False)
    return a_norm, nd.matmul(a_norm, problem.features)


def eval_probs(params: dict[str, np.ndarray], problem: Problem, peer: int = 1, graph=None) -> np.ndarray:
    """Eval-mode probabilities of one peer on the current augmented graph."""
    a_norm, ax = graph if graph is not None else eval_graph(params, problem)
    return gcn.predict_probs(a_norm, problem.features, params[f"p{peer}_w1"], params[f"p{peer}_w2"],
                             propagated=ax)


# ---------------------------------------------------------------------------
# loop


HISTORY_COLUMNS = (
    "epoch", "loss_total", "loss_labeled", "loss_pse", "loss_rec", "acc_train", "acc_val_noisy", "acc_test",
    "n_clean", "n_noisy", "n_sr", "n_pse", "noise_precision", "noise_recall",
)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    loss_total: float
    loss_labeled: float
    loss_pse: float
    loss_rec: float
    acc_train: float
    acc_val_noisy: float
    acc_test: float
    n_clean: int
    n_noisy: int
    n_sr: int
    n_pse: int
    noise_precision: float
    noise_recall: float
    num_added: int = 0

    def row(self) -> tuple:
        return tuple(getattr(self, name) for name in HISTORY_COLUMNS)


@dataclass(eq=False)
class TrainResult:
    state: gcn.PeerState
    params: dict[str, np.ndarray]
    history: list[EpochRecord]
    reports: list[governance.GovernanceReport]
    best_epoch: int
    best_params: dict[str, np.ndarray]
    best_val: float
    best_test: float
    final_test: float

    @property
    def best_record(self) -> EpochRecord:
        return self.history[self.best_epoch - 1]


def _checked_objective(params, problem: Problem, t: int, snapshot: EpochSnapshot) -> ObjectiveResult:
    res = objective(params, problem, t, snapshot)
    values = (res.total.item(), res.labeled.item(), res.pseudo.item(), res.rec.item())
    if not all(math.isfinite(v) for v in values):
        raise TrainingDiverged(
            f"non-finite loss at epoch {t}: total={values[0]}, labeled={values[1]}, "
            f"pseudo={values[2]}, rec={values[3]}"
        )
    return res


def train(graph: Graph, labeling: NoisyLabeling, split: Split, config: TrainConfig,
          problem: Problem | None = None) -> TrainResult:
    problem = problem or prepare(graph, labeling, split, config)
    cfg = problem.config
    params = init_params(problem)
    opt = AdamState()
    dropout_rng = substream(cfg.seed, "dropout")
    negative_rng = substream(cfg.seed, "negatives")
    observed = labeling.observed
    truth = graph.labels
    history: list[EpochRecord] = []
    reports: list[governance.GovernanceReport] = []
    best = (-1.0, 0, params, 0.0)
    res = _checked_objective(params, problem, 1, draw_randomness(problem, dropout_rng, negative_rng))
    for t in range(1, cfg.epochs + 1):
        values = (res.total.item(), res.labeled.item(), res.pseudo.item(), res.rec.item())
        leaf_grads = nd.backward(res.total)
        grads = {k: leaf_grads[leaf] for k, leaf in res.leaves.items() if leaf in leaf_grads}
        params, opt = adam_step(params, grads, opt, cfg.lr, cfg.weight_decay)
        report = res.snapshot.report
        num_added = res.num_added
        reports.append(report)

        # the next epoch's forward pass already builds the graph for the updated
        # parameters, so evaluation reuses it
        if t < cfg.epochs:
            res = _checked_objective(params, problem, t + 1, draw_randomness(problem, dropout_rng, negative_rng))
            graph_now = (res.a_norm, res.ax)
        else:
            graph_now = eval_graph(params, problem)
        probs1 = eval_probs(params, problem, 1, graph_now)
        pred = gcn.argmax_rows(probs1)
        precision, recall = report.noise_scores(labeling.flip_mask)
        record = EpochRecord(
            epoch=t,
            loss_total=values[0],
            loss_labeled=values[1],
            loss_pse=values[2],
            loss_rec=values[3],
            acc_train=evaluate(pred, split.train, observed),
            acc_val_noisy=evaluate(pred, split.val, observed) if len(split.val) else 0.0,
            acc_test=evaluate(pred, split.test, truth),
            n_clean=len(report.division.clean),
            n_noisy=len(report.division.noisy),
            n_sr=len(report.self_reinforce),
            n_pse=len(report.pseudo),
            noise_precision=precision,
            noise_recall=recall,
            num_added=num_added,
        )
        history.append(record)
        # without a validation set the last epoch is reported
        if record.acc_val_noisy > best[0] or not len(split.val):
            best = (record.acc_val_noisy, t, params, record.acc_test)
        logger.debug("epoch %d total=%.4f val=%.3f test=%.3f", t, record.loss_total, record.acc_val_noisy,
                     record.acc_test)

    probs2 = eval_probs(params, problem, 2, graph_now)
    state = gcn.PeerState({k: params[k] for k in gcn.PEER_KEYS}, probs1, probs2)
    return TrainResult(
        state=state,
        params=params,
        history=history,
        reports=reports,
        best_epoch=best[1],
        best_params={k: best[2][k] for k in gcn.PEER_KEYS},
        best_val=best[0],
        best_test=best[3],
        final_test=history[-1].acc_test,
    )
