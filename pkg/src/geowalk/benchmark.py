"""Recall benchmark harness.

Protocol per evaluation graph: sample one seeded query walk per node, embed
it through the street branch at the configured field of view, over-fetch
candidates from the satellite reference index, apply the requested bearing
filter, and score Top-K / Top-K% recall over distinct nodes (a node reached
by several reference walks counts once, at its best rank).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

from .bearing import (FILTER_MODES, MIN_BVM_FOV, filter_retrievals,
                      query_bearing_vector, reference_bearing_vectors)
from .geograph import CityGraph, GraphSplit
from .model import (ModelParams, embed_references, embed_street_features,
                    query_walk_features, walk_travel_yaw)
from .retrieval import RetrievalResult, build_index, query_topk
from .rng import rng_for
from .synth import FeatureSet
from .training import TrainConfig, train
from .walks import sample_walk


class BenchmarkError(ValueError):
    """Invalid benchmark configuration or inputs."""


@dataclass
class BenchmarkConfig:
    walk_length: int = 4
    fovs: tuple[float, ...] = (360.0,)
    modes: tuple[str, ...] = ("none",)
    k_list: tuple[int, ...] = (1, 5, 10)
    percent_list: tuple[float, ...] = (1.0,)
    seeds: tuple[int, ...] = (0, 1, 2)
    bins: int = 8
    overfetch: int = 4
    yaw_mode: str = "travel"

    def __post_init__(self):
        if self.walk_length < 1:
            raise BenchmarkError(f"walk_length must be >= 1, got {self.walk_length}")
        if any(k < 1 for k in self.k_list):
            raise BenchmarkError(f"every k must be >= 1, got {self.k_list}")
        if any(not 0.0 < p <= 100.0 for p in self.percent_list):
            raise BenchmarkError(f"percent values must be in (0, 100], got "
                                 f"{self.percent_list}")
        if self.bins < 2 or self.overfetch < 1:
            raise BenchmarkError("bins must be >= 2 and overfetch >= 1")
        for mode in self.modes:
            if mode not in FILTER_MODES:
                raise BenchmarkError(f"unknown mode {mode!r}")
        for fov in self.fovs:
            for mode in self.modes:
                if mode != "none" and fov < MIN_BVM_FOV:
                    raise BenchmarkError(
                        f"bearing filtering needs fov >= {MIN_BVM_FOV:.0f}, "
                        f"requested mode {mode!r} at fov {fov:.0f}")


@dataclass
class ReportRow:
    city: str
    walk_length: int
    fov: float
    mode: str
    bins: int
    seed: int
    recall_k: dict[int, float]
    recall_pct: dict[float, float]
    n_queries: int
    mean_candidates: float
    truth_filtered: int = 0


@dataclass
class ReportTable:
    rows: list[ReportRow] = field(default_factory=list)

    def to_csv(self) -> str:
        if not self.rows:
            return ""
        first = self.rows[0]
        header = (["city", "walk_length", "fov", "mode", "V", "seed"]
                  + [f"recall@{k}" for k in first.recall_k]
                  + [f"recall@{_pct_label(p)}pct" for p in first.recall_pct]
                  + ["n_queries", "mean_candidates"])
        lines = [",".join(header)]
        for row in self.rows:
            cells = [row.city, str(row.walk_length), f"{row.fov:.0f}", row.mode,
                     str(row.bins), str(row.seed)]
            cells += [repr(v) for v in row.recall_k.values()]
            cells += [repr(v) for v in row.recall_pct.values()]
            cells += [str(row.n_queries), repr(row.mean_candidates)]
            lines.append(",".join(cells))
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        """Plain-text table: one row per (fov, mode), recall columns."""
        if not self.rows:
            return "(empty report)\n"
        first = self.rows[0]
        metrics = ([f"Top-{k}" for k in first.recall_k]
                   + [f"Top-{_pct_label(p)}%" for p in first.recall_pct])
        header = f"{'city':<18}{'len':>4}{'fov':>5}{'mode':>9}{'seed':>5}" \
            + "".join(f"{m:>10}" for m in metrics)
        lines = [header, "-" * len(header)]
        for row in self.rows:
            vals = list(row.recall_k.values()) + list(row.recall_pct.values())
            lines.append(f"{row.city:<18}{row.walk_length:>4}{row.fov:>5.0f}"
                         f"{row.mode:>9}{row.seed:>5}"
                         + "".join(f"{100 * v:>10.2f}" for v in vals))
        return "\n".join(lines) + "\n"

    def mean_recall_k(self, k: int, fov: float | None = None,
                      mode: str | None = None,
                      walk_length: int | None = None) -> float:
        picked = [r.recall_k[k] for r in self.rows
                  if (fov is None or r.fov == fov)
                  and (mode is None or r.mode == mode)
                  and (walk_length is None or r.walk_length == walk_length)]
        if not picked:
            raise BenchmarkError("no rows match the mean_recall_k selection")
        return sum(picked) / len(picked)


def _pct_label(p: float) -> str:
    return str(int(p)) if float(p).is_integer() else str(p)


def recall_at_k(results: list[RetrievalResult], truth: dict[str, str],
                k: int) -> float:
    """Fraction of queries whose true node is among the first k distinct nodes."""
    if not results:
        return 0.0
    hits = 0
    for result in results:
        if result.query_id not in truth:
            raise BenchmarkError(f"no truth entry for query {result.query_id!r}")
        if truth[result.query_id] in result.node_ranking()[:k]:
            hits += 1
    return hits / len(results)


def recall_at_percent(results: list[RetrievalResult], truth: dict[str, str],
                      pct: float, n_reference_nodes: int) -> float:
    """recall@k with k = max(1, floor(pct% of the distinct reference nodes))."""
    if not 0.0 < pct <= 100.0:
        raise BenchmarkError(f"pct must be in (0, 100], got {pct}")
    k = max(1, math.floor(pct / 100.0 * n_reference_nodes))
    return recall_at_k(results, truth, k)


def run_benchmark(graph: CityGraph, features: FeatureSet, params: ModelParams,
                  config: BenchmarkConfig) -> ReportTable:
    """Evaluate trained parameters on one graph; a row per (fov, mode, seed)."""
    references = embed_references(params, graph, features, config.walk_length)
    if not references:
        raise BenchmarkError(f"graph {graph.name!r} yields no reference walks "
                             f"of length {config.walk_length}")
    index = build_index(references)
    n_ref_nodes = len({node for _, node in references.values()})
    ref_bvs = reference_bearing_vectors(graph, config.bins)

    k_for_pct = {p: max(1, math.floor(p / 100.0 * n_ref_nodes))
                 for p in config.percent_list}
    k_max = max(list(config.k_list) + list(k_for_pct.values()))
    fetch = k_max * config.overfetch

    table = ReportTable()
    for seed in config.seeds:
        walks, yaws, captures, truth = [], [], [], {}
        for nid in graph.node_ids():
            rng = rng_for(seed, "bench-query", nid)
            walk = sample_walk(graph, nid, config.walk_length, rng)
            walks.append(walk)
            yaws.append(walk_travel_yaw(graph, walk))
            captures.append([int(c) for c in
                             rng.integers(0, features.captures, size=walk.length)])
            truth[walk.id] = nid

        for fov in config.fovs:
            feats_list = [query_walk_features(graph, w, features, fov,
                                              captures[i], config.yaw_mode)
                          for i, w in enumerate(walks)]
            queries = embed_street_features(params, feats_list)
            raw = [query_topk(index, queries[i], fetch, query_id=w.id)
                   for i, w in enumerate(walks)]

            for mode in config.modes:
                if mode != "none" and fov < MIN_BVM_FOV:
                    raise BenchmarkError(f"mode {mode!r} rejected at fov {fov:.0f}")
                filtered: list[RetrievalResult] = []
                violations = 0
                for i, result in enumerate(raw):
                    query_bv = None
                    if mode != "none":
                        query_bv = query_bearing_vector(graph, truth[result.query_id],
                                                        yaws[i], config.bins, fov)
                    kept = filter_retrievals(result, query_bv, ref_bvs, mode,
                                             yaws[i], k=fetch)
                    filtered.append(kept)
                    if mode != "none":
                        truth_node = truth[result.query_id]
                        if truth_node in result.node_ranking() \
                                and truth_node not in kept.node_ranking():
                            violations += 1

                row = ReportRow(
                    city=graph.name, walk_length=config.walk_length, fov=fov,
                    mode=mode, bins=config.bins, seed=seed,
                    recall_k={k: recall_at_k(filtered, truth, k)
                              for k in config.k_list},
                    recall_pct={p: recall_at_percent(filtered, truth, p, n_ref_nodes)
                                for p in config.percent_list},
                    n_queries=len(filtered),
                    mean_candidates=(sum(len(r.ranked) for r in filtered)
                                     / max(len(filtered), 1)),
                    truth_filtered=violations,
                )
                table.rows.append(row)
    return table


def ablate_walk_length(split: GraphSplit, eval_graph: CityGraph,
                       features: FeatureSet, train_config: TrainConfig,
                       bench_config: BenchmarkConfig,
                       lengths: tuple[int, ...] = (1, 2, 3, 4, 5)) -> ReportTable:
    """Retrain and evaluate once per walk length; same seeds throughout."""
    table = ReportTable()
    for length in lengths:
        result = train(split, features, replace(train_config, walk_length=length))
        part = run_benchmark(eval_graph, features, result.params,
                             replace(bench_config, walk_length=length))
        table.rows.extend(part.rows)
    return table


def ablate_captures(split: GraphSplit, eval_graph: CityGraph,
                    features: FeatureSet, train_config: TrainConfig,
                    bench_config: BenchmarkConfig,
                    captures: tuple[int, ...] = (1, 2, 3, 4, 5)) -> ReportTable:
    """Restrict training to the first c captures per node; evaluate as usual."""
    table = ReportTable()
    for c in captures:
        result = train(split, features, replace(train_config, captures=c))
        part = run_benchmark(eval_graph, features, result.params, bench_config)
        for row in part.rows:
            row.city = f"{row.city}[captures={c}]"
        table.rows.extend(part.rows)
    return table
