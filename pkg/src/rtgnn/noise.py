"""Uniform and pair label-noise injection for the labeled and validation nodes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

UNOBSERVED = -1


@dataclass(frozen=True)
class NoiseSpec:
    kind: str = "uniform"
    rate: float = 0.0
    pair_map: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.kind not in ("uniform", "pair"):
            raise ValueError(f"noise kind must be 'uniform' or 'pair', got {self.kind!r}")
        if not 0.0 <= self.rate < 0.5:
            raise ValueError(f"noise rate must lie in [0, 0.5), got {self.rate}")
        if self.kind == "pair":
            if self.pair_map is None:
                raise ValueError("pair noise needs a pair_map")
            if any(int(dst) == src for src, dst in enumerate(self.pair_map)):
                raise ValueError("pair_map must not map a class to itself")

    @classmethod
    def pair(cls, rate: float, num_classes: int, pair_map=None) -> NoiseSpec:
        """Pair noise; the default pairing is the cyclic shift c -> c+1 mod C."""
        if pair_map is None:
            pair_map = tuple((c + 1) % num_classes for c in range(num_classes))
        return cls("pair", rate, tuple(int(c) for c in pair_map))


@dataclass(frozen=True, eq=False)
class NoisyLabeling:
    """Observed labels for the corrupted ids; ``UNOBSERVED`` everywhere else."""

    observed: np.ndarray
    flip_mask: np.ndarray
    ids: np.ndarray
    spec: NoiseSpec
    seed: int | None = None

    def labels_of(self, ids) -> np.ndarray:
        return self.observed[np.asarray(ids, dtype=np.int64)]


def corrupt(true_labels, ids, spec: NoiseSpec, seed, num_classes: int | None = None) -> NoisyLabeling:
    """Flip each label in ``ids`` independently according to ``spec``.

    Uniform noise moves a label to each other class with probability
    rate/(C-1); pair noise moves it to ``pair_map[label]`` with probability
    rate. Nodes outside ``ids`` stay unobserved.
    """
    true_labels = np.asarray(true_labels, dtype=np.int64)
    ids = np.unique(np.asarray(ids, dtype=np.int64))
    if len(ids) == 0:
        raise ValueError("corrupt() needs at least one node id")
    C = int(num_classes if num_classes is not None else true_labels.max() + 1)
    if spec.kind == "pair" and len(spec.pair_map) != C:
        raise ValueError(f"pair_map has {len(spec.pair_map)} entries for {C} classes")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)

    truth = true_labels[ids]
    flip = rng.random(len(ids)) < spec.rate
    if spec.kind == "uniform":
        offset = rng.integers(1, C, size=len(ids))
        noisy = (truth + offset) % C
    else:
        noisy = np.asarray(spec.pair_map, dtype=np.int64)[truth]
    new = np.where(flip, noisy, truth)

    observed = np.full(len(true_labels), UNOBSERVED, dtype=np.int64)
    observed[ids] = new
    mask = np.zeros(len(true_labels), dtype=bool)
    mask[ids] = new != truth
    for arr in (observed, mask, ids):
        arr.flags.writeable = False
    return NoisyLabeling(observed, mask, ids, spec, seed if isinstance(seed, int) else None)
