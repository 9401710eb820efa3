"""Experiment execution: data sources, per-seed runs, ablations, sweeps and CSV output.

Every seed derives independent named random streams for the split, the label
noise and (through the training config) initialization, dropout and negative
sampling. Output files are written with a fixed column order and ``repr``
floats, so identical inputs give byte-identical files.
"""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .graph import Graph, generate_sbm, load_graph, make_split
from .noise import NoiseSpec, corrupt
from .seeding import substream
from .trainer import HISTORY_COLUMNS, EpochRecord, TrainConfig, train

logger = logging.getLogger(__name__)

SUMMARY_COLUMNS = ("seed", "best_epoch", "val_noisy_best", "test_best", "test_final")
TABLE_COLUMNS = ("mean_test_best", "std_test_best", "mean_test_final", "std_test_final", "n_seeds")

# variant name -> config overrides; "no_ld_sr" disables division and with it self-reinforcement
ABLATIONS: dict[str, dict[str, bool]] = {
    "full": {},
    "no_ld_sr": {"ld": False, "sr": False},
    "no_sr": {"sr": False},
    "no_pl": {"pl": False},
    "no_cr": {"cr": False},
    "no_ga": {"ga": False},
}

SWEEP_FIELDS = {"alpha": "alpha", "tau": "tau", "lambda": "lam"}


@dataclass(frozen=True)
class SbmSource:
    num_nodes: int = 1000
    num_classes: int = 4
    p_in: float = 0.02
    p_out: float = 0.002
    feature_dim: int = 64
    feature_noise: float = 0.5
    seed: int = 0

    @classmethod
    def parse(cls, text: str, seed: int = 0) -> SbmSource:
        """Parse ``"n,C,p_in,p_out,d,noise"``."""
        parts = [p.strip() for p in text.split(",")]
        if len(parts) != 6:
            raise ValueError(f"expected 'n,C,p_in,p_out,d,noise', got {text!r}")
        n, c, p_in, p_out, d, noise = parts
        return cls(int(n), int(c), float(p_in), float(p_out), int(d), float(noise), seed)

    def build(self) -> Graph:
        return generate_sbm(self.num_nodes, self.num_classes, self.p_in, self.p_out, self.feature_dim,
                            self.feature_noise, self.seed)


@dataclass(frozen=True)
class ExperimentSpec:
    dataset: str | None = None
    sbm: SbmSource | None = None
    noise: str = "uniform"
    noise_rate: float = 0.3
    label_rate: float = 5.0
    seeds: tuple[int, ...] = (1, 2, 3, 4, 5)
    config: TrainConfig = field(default_factory=TrainConfig)
    out: str | None = None
    workers: int = 1

    def __post_init__(self):
        if (self.dataset is None) == (self.sbm is None):
            raise ValueError("exactly one of dataset and sbm must be given")
        if not 0.0 < self.label_rate <= 20.0:
            raise ValueError(f"label rate must lie in (0, 20] percent, got {self.label_rate}")
        if self.noise not in ("uniform", "pair"):
            raise ValueError(f"unknown noise kind {self.noise!r}")
        if not 0.0 <= self.noise_rate < 0.5:
            raise ValueError(f"noise rate must lie in [0, 0.5), got {self.noise_rate}")
        if not self.seeds:
            raise ValueError("at least one seed is required")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError("seeds must be distinct")

    @property
    def val_rate(self) -> float:
        return 20.0 - self.label_rate

    def load(self) -> Graph:
        return load_graph(self.dataset) if self.dataset is not None else self.sbm.build()

    def noise_spec(self, num_classes: int) -> NoiseSpec:
        if self.noise == "pair":
            return NoiseSpec.pair(self.noise_rate, num_classes)
        return NoiseSpec("uniform", self.noise_rate)


@dataclass(eq=False)
class SeedResult:
    seed: int
    best_epoch: int
    best_val: float
    best_test: float
    final_test: float
    history: list[EpochRecord]
    governance: list[str]


def _sample_std(values) -> float:
    values = np.asarray(values, dtype=np.float64)
    return float(np.std(values, ddof=1)) if len(values) >= 2 else math.nan


@dataclass(eq=False)
class RunResult:
    spec: ExperimentSpec
    seeds: list[SeedResult]

    @property
    def best_tests(self) -> np.ndarray:
        return np.array([s.best_test for s in self.seeds])

    @property
    def final_tests(self) -> np.ndarray:
        return np.array([s.final_test for s in self.seeds])

    @property
    def mean(self) -> float:
        return float(np.mean(self.best_tests))

    @property
    def std(self) -> float:
        return _sample_std(self.best_tests)

    @property
    def mean_final(self) -> float:
        return float(np.mean(self.final_tests))

    @property
    def std_final(self) -> float:
        return _sample_std(self.final_tests)

    def table_row(self) -> tuple:
        return (self.mean, self.std, self.mean_final, self.std_final, len(self.seeds))


def run_seed(graph: Graph, spec: ExperimentSpec, seed: int) -> SeedResult:
    split = make_split(graph.num_nodes, spec.label_rate / 100.0, spec.val_rate / 100.0, substream(seed, "split"))
    noisy_ids = np.concatenate([split.train, split.val])
    labeling = corrupt(graph.labels, noisy_ids, spec.noise_spec(graph.num_classes), substream(seed, "noise"),
                       graph.num_classes)
    result = train(graph, labeling, split, replace(spec.config, seed=seed))
    logger.info("seed %d: best epoch %d, val %.4f, test %.4f (final %.4f)", seed, result.best_epoch,
                result.best_val, result.best_test, result.final_test)
    return SeedResult(
        seed=seed,
        best_epoch=result.best_epoch,
        best_val=result.best_val,
        best_test=result.best_test,
        final_test=result.final_test,
        history=result.history,
        governance=[r.to_json(labeling.flip_mask) for r in result.reports],
    )


def _run_seed_job(args) -> SeedResult:
    graph, spec, seed = args
    return run_seed(graph, spec, seed)


def run_experiment(spec: ExperimentSpec, graph: Graph | None = None) -> RunResult:
    """Split, corrupt, train and evaluate once per seed; write outputs when ``spec.out`` is set."""
    graph = graph if graph is not None else spec.load()
    jobs = [(graph, spec, seed) for seed in spec.seeds]
    if spec.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=spec.workers) as pool:
            seeds = list(pool.map(_run_seed_job, jobs))
    else:
        seeds = [_run_seed_job(job) for job in jobs]
    result = RunResult(spec, sorted(seeds, key=lambda s: s.seed))
    if spec.out is not None:
        write_run(result, spec.out)
    return result


def run_ablation_grid(spec: ExperimentSpec, graph: Graph | None = None) -> dict[str, RunResult]:
    """Full configuration plus each single-module ablation, on shared seeds."""
    graph = graph if graph is not None else spec.load()
    table = {}
    for name, overrides in ABLATIONS.items():
        out = None if spec.out is None else str(Path(spec.out) / name)
        sub = replace(spec, config=replace(spec.config, **overrides), out=out)
        logger.info("ablation %s", name)
        table[name] = run_experiment(sub, graph)
    if spec.out is not None:
        write_table(Path(spec.out) / "ablation.csv", "variant", table)
    return table


def run_sweep(spec: ExperimentSpec, parameter: str, values, graph: Graph | None = None) -> dict[float, RunResult]:
    """One experiment per value of ``alpha``, ``tau`` or ``lambda``, on shared seeds."""
    if parameter not in SWEEP_FIELDS:
        raise ValueError(f"unknown sweep parameter {parameter!r}; choose from {sorted(SWEEP_FIELDS)}")
    values = [float(v) for v in values]
    if not values:
        raise ValueError("sweep needs at least one value")
    graph = graph if graph is not None else spec.load()
    table = {}
    for value in values:
        out = None if spec.out is None else str(Path(spec.out) / f"{parameter}_{value!r}")
        sub = replace(spec, config=replace(spec.config, **{SWEEP_FIELDS[parameter]: value}), out=out)
        logger.info("sweep %s=%r", parameter, value)
        table[value] = run_experiment(sub, graph)
    if spec.out is not None:
        write_table(Path(spec.out) / f"sweep_{parameter}.csv", parameter, table,
                    extra=("mean_added_edges",), extra_fn=_mean_added_edges)
    return table


def _mean_added_edges(result: RunResult) -> tuple:
    return (float(np.mean([s.history[-1].num_added for s in result.seeds])),)


# ---------------------------------------------------------------------------
# output


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _write_csv(path: Path, header, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def write_run(result: RunResult, out_dir) -> Path:
    out = Path(out_dir)
    for s in result.seeds:
        _write_csv(out / f"history_seed{s.seed}.csv", HISTORY_COLUMNS, (r.row() for r in s.history))
        (out / f"governance_seed{s.seed}.jsonl").write_text("".join(line + "\n" for line in s.governance),
                                                           encoding="utf-8")
    rows = [(s.seed, s.best_epoch, s.best_val, s.best_test, s.final_test) for s in result.seeds]
    rows.append(("mean", "", float(np.mean([s.best_val for s in result.seeds])), result.mean, result.mean_final))
    rows.append(("std", "", _sample_std([s.best_val for s in result.seeds]), result.std, result.std_final))
    _write_csv(out / "summary.csv", SUMMARY_COLUMNS, rows)
    return out


def write_table(path, key_name: str, table: dict, extra: tuple = (), extra_fn=None) -> Path:
    path = Path(path)
    rows = []
    for key, result in table.items():
        row = (key, *result.table_row())
        if extra_fn is not None:
            row = row + extra_fn(result)
        rows.append(row)
    _write_csv(path, (key_name, *TABLE_COLUMNS, *extra), rows)
    return path


def read_csv(path) -> list[dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def read_history(path) -> list[EpochRecord]:
    """Parse a ``history_seed<k>.csv`` file back into records."""
    ints = {"epoch", "n_clean", "n_noisy", "n_sr", "n_pse"}
    rows = read_csv(path)
    if rows and tuple(rows[0].keys()) != HISTORY_COLUMNS:
        raise ValueError(f"{path}: unexpected columns {tuple(rows[0].keys())}")
    return [EpochRecord(**{k: int(v) if k in ints else float(v) for k, v in row.items()}) for row in rows]
