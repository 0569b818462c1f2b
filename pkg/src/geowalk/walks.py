"""Walk sampling and enumeration.

A walk is a simple path of adjacent junctions whose final node is the
localisation target: it models the vehicle's recent trajectory arriving at
the query junction. Queries use one randomly sampled walk per node; the
reference set enumerates every walk exhaustively.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geograph import CityGraph, GraphError


@dataclass(frozen=True)
class Walk:
    """Ordered node sequence; the final element is the target."""

    node_ids: tuple[str, ...]

    def __post_init__(self):
        if not self.node_ids:
            raise ValueError("walk must contain at least one node")
        if len(set(self.node_ids)) != len(self.node_ids):
            raise ValueError(f"walk revisits a node: {self.node_ids}")

    @property
    def target_id(self) -> str:
        return self.node_ids[-1]

    @property
    def length(self) -> int:
        return len(self.node_ids)

    @property
    def id(self) -> str:
        return "|".join(self.node_ids)


def _validate(graph: CityGraph, target: str, length: int) -> None:
    if target not in graph.nodes:
        raise GraphError(f"unknown target node {target!r}")
    if length < 1:
        raise ValueError(f"walk length must be >= 1, got {length}")


def sample_walk(graph: CityGraph, target: str, length: int,
                rng: np.random.Generator) -> Walk:
    """Sample one depth-first walk of the given length ending at ``target``.

    Grows the walk backwards from the target, choosing unvisited neighbours
    in uniformly random order and backtracking when stuck. If no simple walk
    of the requested length exists, the longest achievable walk is returned,
    so every node stays queryable.
    """
    _validate(graph, target, length)
    best: list[str] = [target]

    def extend(rpath: list[str], visited: set[str]) -> list[str] | None:
        nonlocal best
        if len(rpath) > len(best):
            best = list(rpath)
        if len(rpath) == length:
            return rpath
        candidates = [nb for nb in graph.neighbors(rpath[-1]) if nb not in visited]
        if not candidates:
            return None
        order = rng.permutation(len(candidates))
        for idx in order:
            nb = candidates[idx]
            visited.add(nb)
            rpath.append(nb)
            result = extend(rpath, visited)
            if result is not None:
                return result
            rpath.pop()
            visited.remove(nb)
        return None

    found = extend([target], {target})
    sequence = found if found is not None else best
    return Walk(tuple(reversed(sequence)))


def enumerate_walks(graph: CityGraph, target: str, length: int) -> list[Walk]:
    """All distinct simple walks of exactly ``length`` ending at ``target``.

    Returned in lexicographic order of their node-id sequences.
    """
    _validate(graph, target, length)
    walks: list[tuple[str, ...]] = []

    def extend(rpath: list[str], visited: set[str]) -> None:
        if len(rpath) == length:
            walks.append(tuple(reversed(rpath)))
            return
        for nb in graph.neighbors(rpath[-1]):
            if nb not in visited:
                visited.add(nb)
                rpath.append(nb)
                extend(rpath, visited)
                rpath.pop()
                visited.remove(nb)

    extend([target], {target})
    walks.sort()
    return [Walk(w) for w in walks]


def count_walks(graph: CityGraph, length: int) -> int:
    """Total number of simple walks of exactly ``length`` over all targets."""
    if length < 1:
        raise ValueError(f"walk length must be >= 1, got {length}")

    def count_from(rpath: list[str], visited: set[str]) -> int:
        if len(rpath) == length:
            return 1
        total = 0
        for nb in graph.neighbors(rpath[-1]):
            if nb not in visited:
                visited.add(nb)
                rpath.append(nb)
                total += count_from(rpath, visited)
                rpath.pop()
                visited.remove(nb)
        return total

    return sum(count_from([nid], {nid}) for nid in graph.node_ids())
