"""Command-line entry point.

Subcommands wire the modules into reproducible experiments: ``synth`` writes
a city graph and feature file, ``stats`` prints graph/walk counts, ``train``
fits a model, ``eval`` runs the retrieval benchmark, and ``ablate`` sweeps
walk length, capture count, or field of view. Every run writes a manifest
(resolved parameters plus input hashes) sufficient to replay it exactly.
Configuration comes from an optional JSON file; explicit flags win.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import asdict, dataclass
from pathlib import Path

from .benchmark import (BenchmarkConfig, ablate_captures, ablate_walk_length,
                        run_benchmark)
from .geograph import GeoCoord, load_graph, save_graph, split_graph
from .model import load_checkpoint, save_checkpoint
from .synth import generate_city, generate_features, load_features, save_features
from .training import TrainConfig, train, training_log_csv
from .walks import count_walks

_USAGE_HINT = "run 'geowalk --help' or 'geowalk <command> --help' for usage"


class CliError(Exception):
    pass


@dataclass
class RunManifest:
    command: str
    parameters: dict
    seed: int
    output_dir: str
    input_hashes: dict[str, str]
    outputs: list[str]

    def write(self, out_dir: Path) -> None:
        payload = asdict(self)
        (out_dir / "manifest.json").write_text(
            json.dumps(payload, indent=1, sort_keys=True), encoding="utf-8")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _hash_inputs(paths: list[Path]) -> dict[str, str]:
    hashes = {}
    for path in paths:
        hashes[str(path)] = _sha256(path)
        sidecar = Path(str(path) + ".json")
        if sidecar.exists():
            hashes[str(sidecar)] = _sha256(sidecar)
    return hashes


def _require_file(path: str, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise CliError(f"{what} not found: {path} ({_USAGE_HINT})")
    return p


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    doc = json.loads(_require_file(path, "config file").read_text(encoding="utf-8"))
    if not isinstance(doc, dict):
        raise CliError(f"config file {path} must hold a JSON object")
    return doc


def _resolve(args: argparse.Namespace, config: dict, key: str, default):
    """Flag > config file > default."""
    flag = getattr(args, key, None)
    if flag is not None:
        return flag
    if key in config:
        return config[key]
    return default


def _parse_list(text, cast):
    if isinstance(text, (list, tuple)):
        return tuple(cast(v) for v in text)
    return tuple(cast(v) for v in str(text).split(","))


def _mode_name(mode: str) -> str:
    return mode.replace("-", "_")


def cmd_synth(args: argparse.Namespace) -> int:
    config = _load_config(args.config)
    nodes = int(_resolve(args, config, "nodes", 441))
    jitter = float(_resolve(args, config, "jitter", 0.25))
    drop = float(_resolve(args, config, "drop", 0.1))
    spacing = float(_resolve(args, config, "spacing", 50.0))
    noise = float(_resolve(args, config, "noise", 1.0))
    dim = int(_resolve(args, config, "dim", 768))
    sectors = int(_resolve(args, config, "sectors", 8))
    captures = int(_resolve(args, config, "captures", 5))
    seed = int(_resolve(args, config, "seed", 0))
    lat = float(_resolve(args, config, "origin_lat", 51.5))
    lon = float(_resolve(args, config, "origin_lon", -0.12))

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    graph = generate_city(nodes, jitter, drop, GeoCoord(lat, lon), spacing, seed)
    features = generate_features(graph, dim, sectors, noise, seed, captures)
    save_graph(graph, out_dir / "graph.json")
    save_features(features, out_dir / "features.bin")

    RunManifest(command="synth",
                parameters={"nodes": nodes, "jitter": jitter, "drop": drop,
                            "spacing": spacing, "noise": noise, "dim": dim,
                            "sectors": sectors, "captures": captures,
                            "origin_lat": lat, "origin_lon": lon},
                seed=seed, output_dir=str(out_dir), input_hashes={},
                outputs=["graph.json", "features.bin", "features.bin.json"],
                ).write(out_dir)
    print(f"wrote {out_dir}/graph.json ({len(graph.nodes)} nodes, "
          f"{len(graph.edges)} edges) and features.bin")
    return 0


def cmd_stats(args: argparse.Namespace) -> int:
    graph = load_graph(_require_file(args.graph, "graph file"))
    length = args.walk_length if args.walk_length is not None else 4
    walks = count_walks(graph, length)
    print(f"{'Region':<20}{'Nodes':>8}{'Edges':>8}{'Walks':>10}  (length {length})")
    print(f"{graph.name:<20}{len(graph.nodes):>8}{len(graph.edges):>8}{walks:>10}")
    return 0


def _train_config(args: argparse.Namespace, config: dict) -> TrainConfig:
    layer_dims = _parse_list(_resolve(args, config, "layer_dims", (768, 256, 64)), int)
    captures = _resolve(args, config, "captures", None)
    return TrainConfig(
        epochs=int(_resolve(args, config, "epochs", 100)),
        learning_rate=float(_resolve(args, config, "learning_rate", 1e-4)),
        margin=float(_resolve(args, config, "margin", 0.2)),
        walk_length=int(_resolve(args, config, "walk_length", 4)),
        weight_decay=float(_resolve(args, config, "weight_decay", 1e-4)),
        batch_size=int(_resolve(args, config, "batch_size", 64)),
        plateau_patience=int(_resolve(args, config, "plateau_patience", 5)),
        plateau_factor=float(_resolve(args, config, "plateau_factor", 0.5)),
        seed=int(_resolve(args, config, "seed", 0)),
        layer_dims=layer_dims,
        aggregator=str(_resolve(args, config, "aggregator", "mean")),
        captures=None if captures is None else int(captures),
    )


def cmd_train(args: argparse.Namespace) -> int:
    config = _load_config(args.config)
    graph_path = _require_file(args.graph, "graph file")
    feat_path = _require_file(args.features, "feature file")
    graph = load_graph(graph_path)
    features = load_features(feat_path, graph)
    train_cfg = _train_config(args, config)
    val_fraction = float(_resolve(args, config, "val_fraction", 1.0 / 9.0))

    split = split_graph(graph, val_fraction, train_cfg.seed)
    result = train(split, features, train_cfg)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(result.params, out_dir / "model.sgbm")
    (out_dir / "train_log.csv").write_text(training_log_csv(result.log),
                                           encoding="utf-8")
    RunManifest(command="train",
                parameters={**asdict(train_cfg), "val_fraction": val_fraction,
                            "graph": str(graph_path), "features": str(feat_path)},
                seed=train_cfg.seed, output_dir=str(out_dir),
                input_hashes=_hash_inputs([graph_path, feat_path]),
                outputs=["model.sgbm", "train_log.csv"]).write(out_dir)
    best = result.log[result.best_epoch]
    print(f"trained {train_cfg.epochs} epochs; best val top-1 "
          f"{best.val_top1:.3f} at epoch {best.epoch}; wrote {out_dir}/model.sgbm")
    return 0


def _bench_config(args: argparse.Namespace, config: dict) -> BenchmarkConfig:
    modes = _parse_list(_resolve(args, config, "mode", ("none",)), str)
    return BenchmarkConfig(
        walk_length=int(_resolve(args, config, "walk_length", 4)),
        fovs=_parse_list(_resolve(args, config, "fov", (360.0,)), float),
        modes=tuple(_mode_name(m) for m in modes),
        k_list=_parse_list(_resolve(args, config, "k_list", (1, 5, 10)), int),
        percent_list=_parse_list(_resolve(args, config, "percent_list", (1.0,)), float),
        seeds=_parse_list(_resolve(args, config, "seeds", (0, 1, 2)), int),
        bins=int(_resolve(args, config, "bins", 8)),
        overfetch=int(_resolve(args, config, "overfetch", 4)),
    )


def cmd_eval(args: argparse.Namespace) -> int:
    config = _load_config(args.config)
    ckpt_path = _require_file(args.checkpoint, "checkpoint")
    graph_path = _require_file(args.graph, "graph file")
    feat_path = _require_file(args.features, "feature file")
    graph = load_graph(graph_path)
    features = load_features(feat_path, graph)
    params = load_checkpoint(ckpt_path)
    bench_cfg = _bench_config(args, config)

    table = run_benchmark(graph, features, params, bench_cfg)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.csv").write_text(table.to_csv(), encoding="utf-8")
    RunManifest(command="eval",
                parameters={**asdict(bench_cfg), "checkpoint": str(ckpt_path),
                            "graph": str(graph_path), "features": str(feat_path)},
                seed=bench_cfg.seeds[0], output_dir=str(out_dir),
                input_hashes=_hash_inputs([ckpt_path, graph_path, feat_path]),
                outputs=["report.csv"]).write(out_dir)
    print(table.to_text(), end="")
    print(f"wrote {out_dir}/report.csv")
    return 0


def cmd_ablate(args: argparse.Namespace) -> int:
    config = _load_config(args.config)
    graph_path = _require_file(args.graph, "graph file")
    feat_path = _require_file(args.features, "feature file")
    graph = load_graph(graph_path)
    features = load_features(feat_path, graph)
    eval_graph, eval_features = graph, features
    if args.eval_graph is not None:
        eval_graph = load_graph(_require_file(args.eval_graph, "eval graph"))
        eval_features = load_features(
            _require_file(args.eval_features or args.features, "eval features"),
            eval_graph)

    train_cfg = _train_config(args, config)
    bench_cfg = _bench_config(args, config)
    val_fraction = float(_resolve(args, config, "val_fraction", 1.0 / 9.0))
    split = split_graph(graph, val_fraction, train_cfg.seed)

    sweep = args.sweep
    if sweep == "walk-length":
        lengths = _parse_list(_resolve(args, config, "lengths", (1, 2, 3, 4, 5)), int)
        table = ablate_walk_length(split, eval_graph, eval_features, train_cfg,
                                   bench_cfg, lengths)
    elif sweep == "captures":
        counts = _parse_list(_resolve(args, config, "capture_counts",
                                      (1, 2, 3, 4, 5)), int)
        table = ablate_captures(split, eval_graph, eval_features, train_cfg,
                                bench_cfg, counts)
    elif sweep == "fov":
        from dataclasses import replace
        result = train(split, features, train_cfg)
        table = run_benchmark(eval_graph, eval_features, result.params,
                              replace(bench_cfg, fovs=(360.0, 180.0, 90.0)))
    else:
        raise CliError(f"unknown sweep {sweep!r} ({_USAGE_HINT})")

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.csv").write_text(table.to_csv(), encoding="utf-8")
    RunManifest(command=f"ablate-{sweep}",
                parameters={**asdict(train_cfg), **asdict(bench_cfg),
                            "val_fraction": val_fraction,
                            "graph": str(graph_path), "features": str(feat_path)},
                seed=train_cfg.seed, output_dir=str(out_dir),
                input_hashes=_hash_inputs([graph_path, feat_path]),
                outputs=["report.csv"]).write(out_dir)
    print(table.to_text(), end="")
    print(f"wrote {out_dir}/report.csv")
    return 0


def _add_train_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--learning-rate", dest="learning_rate", type=float)
    parser.add_argument("--margin", type=float)
    parser.add_argument("--walk-length", dest="walk_length", type=int)
    parser.add_argument("--batch-size", dest="batch_size", type=int)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--val-fraction", dest="val_fraction", type=float)
    parser.add_argument("--captures", type=int)
    parser.add_argument("--layer-dims", dest="layer_dims")


def _add_eval_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--fov", help="comma-separated fields of view")
    parser.add_argument("--mode", help="comma-separated: none,bvm,bvm-yaw")
    parser.add_argument("--bins", type=int, help="bearing vector bin count V")
    parser.add_argument("--seeds", help="comma-separated query seeds")
    parser.add_argument("--k-list", dest="k_list")
    parser.add_argument("--overfetch", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="geowalk",
        description="graph-structured cross-view geo-localisation experiments")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("synth", help="generate a synthetic city and features")
    p.add_argument("--out", required=True)
    p.add_argument("--nodes", type=int)
    p.add_argument("--jitter", type=float)
    p.add_argument("--drop", type=float)
    p.add_argument("--spacing", type=float)
    p.add_argument("--noise", type=float)
    p.add_argument("--dim", type=int)
    p.add_argument("--sectors", type=int)
    p.add_argument("--captures", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--config")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("stats", help="graph and walk-count statistics")
    p.add_argument("--graph", required=True)
    p.add_argument("--walk-length", dest="walk_length", type=int)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("train", help="train the two-branch embedding model")
    p.add_argument("--graph", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="run the retrieval benchmark")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--graph", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--walk-length", dest="walk_length", type=int)
    _add_eval_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="sweep walk length, captures, or fov")
    p.add_argument("--sweep", required=True,
                   choices=["walk-length", "captures", "fov"])
    p.add_argument("--graph", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--eval-graph", dest="eval_graph")
    p.add_argument("--eval-features", dest="eval_features")
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    _add_train_flags(p)
    _add_eval_flags(p)
    p.set_defaults(func=cmd_ablate)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CliError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        if _USAGE_HINT not in str(exc):
            print(_USAGE_HINT, file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
