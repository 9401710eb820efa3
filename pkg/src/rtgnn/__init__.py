"""Noise-robust training of graph convolutional networks with scarce, noisy labels."""

from .graph import Graph, Split, generate_sbm, load_graph, make_split, normalize_adjacency, save_graph
from .harness import ExperimentSpec, RunResult, SbmSource, run_ablation_grid, run_experiment, run_sweep
from .noise import NoiseSpec, NoisyLabeling, corrupt
from .trainer import TrainConfig, TrainResult, train

__all__ = [
    "ExperimentSpec",
    "Graph",
    "NoiseSpec",
    "NoisyLabeling",
    "RunResult",
    "SbmSource",
    "Split",
    "TrainConfig",
    "TrainResult",
    "corrupt",
    "generate_sbm",
    "load_graph",
    "make_split",
    "normalize_adjacency",
    "run_ablation_grid",
    "run_experiment",
    "run_sweep",
    "save_graph",
    "train",
]

__version__ = "0.1.0"
