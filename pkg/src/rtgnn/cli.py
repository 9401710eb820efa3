"""Command-line entry point: ``rtgnn {run,ablate,sweep,gen-sbm}``."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import fields

from .graph import save_graph
from .harness import ABLATIONS, SWEEP_FIELDS, ExperimentSpec, SbmSource, run_ablation_grid, run_experiment, run_sweep
from .trainer import TrainConfig

logger = logging.getLogger("rtgnn")

DEFAULT_SBM = "1000,4,0.02,0.002,64,0.5"

# CLI flag dest -> TrainConfig field
_CONFIG_FLAGS = {
    "epochs": "epochs",
    "lr": "lr",
    "weight_decay": "weight_decay",
    "hidden": "hidden",
    "k": "k",
    "tau": "tau",
    "n_neg": "n_neg",
    "alpha": "alpha",
    "lam": "lam",
    "gamma": "gamma",
    "th_pse": "th_pse",
}


def _seed_list(text: str) -> tuple[int, ...]:
    try:
        seeds = tuple(int(s) for s in text.split(",") if s.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"seeds must be comma-separated integers: {text!r}") from exc
    if not seeds:
        raise argparse.ArgumentTypeError("at least one seed is required")
    return seeds


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"values must be comma-separated numbers: {text!r}") from exc


def _experiment_parent() -> argparse.ArgumentParser:
    defaults = {f.name: f.default for f in fields(TrainConfig)}
    p = argparse.ArgumentParser(add_help=False)
    src = p.add_mutually_exclusive_group()
    src.add_argument("--dataset", metavar="PATH", help="directory with edges.txt, features.csv, labels.csv")
    src.add_argument("--sbm", metavar="n,C,p_in,p_out,d,noise", help=f"synthetic SBM graph (default {DEFAULT_SBM})")
    p.add_argument("--graph-seed", type=int, default=0, help="seed for SBM synthesis (default 0)")
    p.add_argument("--noise", choices=("uniform", "pair"), default="uniform")
    p.add_argument("--noise-rate", type=float, default=0.3)
    p.add_argument("--label-rate", type=float, default=5.0, help="labeled percent x; validation gets 20-x")
    p.add_argument("--seeds", type=_seed_list, default=(1, 2, 3, 4, 5), help="comma-separated run seeds")
    p.add_argument("--epochs", type=int, default=defaults["epochs"])
    p.add_argument("--lr", type=float, default=defaults["lr"])
    p.add_argument("--weight-decay", type=float, default=defaults["weight_decay"])
    p.add_argument("--hidden", type=int, default=defaults["hidden"])
    p.add_argument("--k", type=int, default=defaults["k"], help="candidate neighbors per node")
    p.add_argument("--tau", type=float, default=defaults["tau"], help="edge weight threshold")
    p.add_argument("--n-neg", type=int, default=defaults["n_neg"], help="negative samples per node")
    p.add_argument("--alpha", type=float, default=defaults["alpha"], help="reconstruction loss weight")
    p.add_argument("--lambda", dest="lam", type=float, default=defaults["lam"], help="consistency weight")
    p.add_argument("--gamma", type=float, default=defaults["gamma"], help="weight of noisy candidates")
    p.add_argument("--th-pse", type=float, default=defaults["th_pse"], help="pseudo-label confidence")
    for flag in ("ld", "sr", "pl", "cr", "ga"):
        p.add_argument(f"--no-{flag}", action="store_true", help=f"disable the {flag.upper()} module")
    p.add_argument("--workers", type=int, default=1, help="parallel seed processes")
    p.add_argument("--out", metavar="DIR", help="output directory")
    p.add_argument("-v", "--verbose", action="count", default=0)
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rtgnn", description="Noise-robust GCN training on sparsely labeled graphs.")
    sub = parser.add_subparsers(dest="command", required=True)
    parent = _experiment_parent()
    sub.add_parser("run", parents=[parent], help="train and evaluate over several seeds")
    sub.add_parser("ablate", parents=[parent], help="full model vs each single-module ablation")
    sweep = sub.add_parser("sweep", parents=[parent], help="sensitivity sweep over one hyperparameter")
    sweep.add_argument("--param", required=True, choices=sorted(SWEEP_FIELDS))
    sweep.add_argument("--values", required=True, type=_float_list, help="comma-separated values")

    gen = sub.add_parser("gen-sbm", help="write a synthetic SBM dataset directory")
    gen.add_argument("--sbm", default=DEFAULT_SBM, metavar="n,C,p_in,p_out,d,noise")
    gen.add_argument("--graph-seed", type=int, default=0)
    gen.add_argument("--out", required=True, metavar="DIR")
    gen.add_argument("-v", "--verbose", action="count", default=0)
    return parser


def spec_from_args(args: argparse.Namespace) -> ExperimentSpec:
    overrides = {field_name: getattr(args, dest) for dest, field_name in _CONFIG_FLAGS.items()}
    for flag in ("ld", "sr", "pl", "cr", "ga"):
        overrides[flag] = not getattr(args, f"no_{flag}")
    config = TrainConfig(**overrides)
    sbm = None
    if args.dataset is None:
        sbm = SbmSource.parse(args.sbm or DEFAULT_SBM, seed=args.graph_seed)
    return ExperimentSpec(
        dataset=args.dataset,
        sbm=sbm,
        noise=args.noise,
        noise_rate=args.noise_rate,
        label_rate=args.label_rate,
        seeds=tuple(args.seeds),
        config=config,
        out=args.out,
        workers=args.workers,
    )


def _pct(x: float) -> str:
    return "nan" if x != x else f"{100 * x:.2f}"


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose > 1 else logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )

    if args.command == "gen-sbm":
        graph = SbmSource.parse(args.sbm, seed=args.graph_seed).build()
        save_graph(graph, args.out)
        print(f"wrote {graph.num_nodes} nodes, {graph.num_edges} edges to {args.out}")
        return 0

    try:
        spec = spec_from_args(args)
    except ValueError as exc:
        parser.error(str(exc))

    if args.command == "run":
        result = run_experiment(spec)
        for s in result.seeds:
            print(f"seed {s.seed}: best epoch {s.best_epoch} test {_pct(s.best_test)} final {_pct(s.final_test)}")
        print(f"test accuracy {_pct(result.mean)} +- {_pct(result.std)} (final {_pct(result.mean_final)})")
    elif args.command == "ablate":
        table = run_ablation_grid(spec)
        width = max(len(name) for name in ABLATIONS)
        for name, result in table.items():
            print(f"{name:<{width}}  {_pct(result.mean)} +- {_pct(result.std)}")
    elif args.command == "sweep":
        table = run_sweep(spec, args.param, args.values)
        for value, result in table.items():
            print(f"{args.param}={value:g}  {_pct(result.mean)} +- {_pct(result.std)}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
