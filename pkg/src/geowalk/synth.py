"""Synthetic cities and cross-view feature synthesis.

Road graphs are jittered grids with connectivity-preserving edge drops.
Features stand in for CNN outputs: each node gets one satellite vector and
five noisy panoramic street captures. Street panoramas are split into A
angular sectors; sectors aligned with the node's neighbour bearings carry a
strong identity signal plus a shared per-direction signature, so street and
satellite features of the same node are learnably correlated.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geograph import (M_PER_DEG_LAT, CityGraph, GeoCoord, GraphError,
                       NodeRecord, angle_diff)
from .rng import rng_for

# fixed entropy for the cross-view mixing matrices; independent of the user
# seed so cities generated under different seeds share latent structure
_MIXING_SALT = 0x6E0D35

DEFAULT_CAPTURES = 5


class FeatureError(ValueError):
    """Malformed feature data or file."""


@dataclass
class AngularFeature:
    """Panoramic feature map: A angular sectors of d_pano values each.

    Sector b covers headings [b*360/A - 180, (b+1)*360/A - 180).
    """

    bins: np.ndarray  # (A, d_pano)

    @property
    def sectors(self) -> int:
        return self.bins.shape[0]


def sector_of(bearing: float, sectors: int) -> int:
    """Index of the angular sector containing a bearing in [-180, 180]."""
    width = 360.0 / sectors
    idx = int(math.floor((bearing + 180.0) / width))
    return idx % sectors


def sector_centre(idx: int, sectors: int) -> float:
    width = 360.0 / sectors
    return (idx + 0.5) * width - 180.0


def fov_window(pano: AngularFeature, theta_fov: float, yaw: float) -> np.ndarray:
    """Mean of the sectors whose centres lie within +/- theta_fov/2 of yaw.

    Wraps around +/-180; always selects at least one sector (the nearest one
    when the window is narrower than a sector).
    """
    if theta_fov <= 0:
        raise FeatureError(f"theta_fov must be positive, got {theta_fov}")
    sectors = pano.sectors
    offsets = np.array([abs(angle_diff(sector_centre(b, sectors), yaw))
                        for b in range(sectors)])
    selected = offsets <= theta_fov / 2.0 + 1e-9
    if not selected.any():
        selected[int(np.argmin(offsets))] = True
    return pano.bins[selected].mean(axis=0)


@dataclass
class FeatureSet:
    """Per-node satellite vectors and street panorama captures.

    ``noise_sigma`` and ``seed`` are None when loaded from a file that does
    not record how the features were produced.
    """

    sat: dict[str, np.ndarray]                 # node id -> (D,)
    street: dict[str, list[AngularFeature]]    # node id -> captures
    dim: int
    sectors: int
    captures: int
    noise_sigma: float | None = None
    seed: int | None = None

    @property
    def d_pano(self) -> int:
        return self.dim // self.sectors


def generate_city(n_nodes: int, jitter: float, drop_prob: float,
                  origin: GeoCoord, spacing_m: float, seed: int) -> CityGraph:
    """Connected jittered-grid road graph with random edge drops.

    ``n_nodes`` must be a perfect square >= 9. Each grid edge is dropped with
    probability ``drop_prob`` unless removal would disconnect the graph, in
    which case it is kept. Node yaws are uniform in [-180, 180).
    """
    side = math.isqrt(n_nodes)
    if side * side != n_nodes or n_nodes < 9:
        raise GraphError(f"n_nodes must be a perfect square >= 9, got {n_nodes}")
    if not 0.0 <= drop_prob < 0.5:
        raise GraphError(f"drop_prob must be in [0, 0.5), got {drop_prob}")
    if not 0.0 <= jitter <= 0.45:
        raise GraphError(f"jitter must be in [0, 0.45], got {jitter}")
    if spacing_m <= 0:
        raise GraphError(f"spacing_m must be positive, got {spacing_m}")

    rng = rng_for(seed, "city")
    dlat = spacing_m / M_PER_DEG_LAT
    dlon = spacing_m / (M_PER_DEG_LAT * math.cos(math.radians(origin.lat)))

    width = len(str(n_nodes - 1))
    nodes = []
    offsets = rng.uniform(-jitter, jitter, size=(n_nodes, 2))
    yaws = rng.uniform(-180.0, 180.0, size=n_nodes)
    for r in range(side):
        for c in range(side):
            i = r * side + c
            nodes.append(NodeRecord(
                id=f"n{i:0{width}d}",
                location=GeoCoord(origin.lat + (r + offsets[i, 0]) * dlat,
                                  origin.lon + (c + offsets[i, 1]) * dlon),
                yaw=float(yaws[i]),
            ))

    def nid(r: int, c: int) -> str:
        return nodes[r * side + c].id

    edges = []
    for r in range(side):
        for c in range(side):
            if c + 1 < side:
                edges.append((nid(r, c), nid(r, c + 1)))
            if r + 1 < side:
                edges.append((nid(r, c), nid(r + 1, c)))

    adjacency: dict[str, set[str]] = {n.id: set() for n in nodes}
    for a, b in edges:
        adjacency[a].add(b)
        adjacency[b].add(a)

    def connected_without(a: str, b: str) -> bool:
        # BFS from a with edge (a, b) masked
        seen = {a}
        frontier = [a]
        while frontier:
            cur = frontier.pop()
            for nb in adjacency[cur]:
                if (cur, nb) in ((a, b), (b, a)):
                    continue
                if nb not in seen:
                    seen.add(nb)
                    frontier.append(nb)
        return len(seen) == len(adjacency)

    kept = set(edges)
    order = rng.permutation(len(edges))
    marks = rng.random(len(edges)) < drop_prob
    for idx in order:
        if not marks[idx]:
            continue
        a, b = edges[int(idx)]
        if connected_without(a, b):
            kept.discard((a, b))
            adjacency[a].discard(b)
            adjacency[b].discard(a)

    return CityGraph.from_parts(f"synth-{n_nodes}-{seed}", nodes, sorted(kept))


def mixing_matrices(dim: int, sectors: int) -> tuple[np.ndarray, np.ndarray]:
    """Fixed cross-view structure shared by all feature sets of shape (D, A).

    Returns (sat_mix, road_signatures): the latent-to-satellite projection
    (D, d_pano) and the per-sector road signature bank (A, d_pano).
    """
    d_pano = dim // sectors
    rng = rng_for(_MIXING_SALT, "mixing", dim, sectors)
    sat_mix = rng.standard_normal((dim, d_pano)) / math.sqrt(d_pano)
    road_sigs = rng.standard_normal((sectors, d_pano))
    return sat_mix, road_sigs


def lift_to_sat_space(pooled: np.ndarray, dim: int, sectors: int) -> np.ndarray:
    """Project a pooled street vector into satellite feature space.

    Uses the same fixed mixing as the generator; handy as a no-learning
    retrieval baseline and for generator sanity checks.
    """
    sat_mix, _ = mixing_matrices(dim, sectors)
    return sat_mix @ pooled


def generate_features(graph: CityGraph, dim: int, sectors: int,
                      noise_sigma: float, seed: int,
                      captures: int = DEFAULT_CAPTURES) -> FeatureSet:
    """Synthesise correlated street/satellite features for every node.

    Per node a latent identity z is drawn; the satellite vector is a fixed
    projection of z plus noise. Every street sector holds z, and sectors
    aligned with the node's neighbour bearings additionally carry that
    direction's signature vector; the ``captures`` panoramas differ only by
    independent noise draws. Windowing over fewer sectors therefore averages
    away less noise, which is what degrades narrow fields of view.
    """
    if dim < 8 or sectors < 4:
        raise FeatureError(f"need dim >= 8 and sectors >= 4, got {dim}, {sectors}")
    if dim % sectors != 0:
        raise FeatureError(f"dim {dim} not divisible by sectors {sectors}")
    if noise_sigma < 0:
        raise FeatureError(f"noise_sigma must be >= 0, got {noise_sigma}")

    d_pano = dim // sectors
    sat_mix, road_sigs = mixing_matrices(dim, sectors)
    sat: dict[str, np.ndarray] = {}
    street: dict[str, list[AngularFeature]] = {}

    for node_id in graph.node_ids():
        node = graph.nodes[node_id]
        if node.neighbour_bearings is None:
            raise FeatureError(f"node {node_id!r} has no neighbour bearings")
        rng = rng_for(seed, "features", node_id)
        z = rng.standard_normal(d_pano)
        sat[node_id] = sat_mix @ z + noise_sigma * rng.standard_normal(dim)

        base = np.tile(z, (sectors, 1))
        road_sectors = {sector_of(bearing, sectors)
                        for bearing in node.neighbour_bearings}
        for b in road_sectors:
            base[b] = base[b] + road_sigs[b]
        street[node_id] = [
            AngularFeature(base + noise_sigma * rng.standard_normal((sectors, d_pano)))
            for _ in range(captures)
        ]

    return FeatureSet(sat=sat, street=street, dim=dim, sectors=sectors,
                      captures=captures, noise_sigma=noise_sigma, seed=seed)


_MAGIC = b"SGBF"
_VERSION = 1


def save_features(features: FeatureSet, path: str | Path) -> None:
    """Write the binary feature format plus its node-id JSON sidecar."""
    path = Path(path)
    node_ids = sorted(features.sat)
    d_pano = features.d_pano
    with path.open("wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<5I", _VERSION, len(node_ids), features.dim,
                             features.sectors, features.captures))
        for node_id in node_ids:
            fh.write(features.sat[node_id].astype("<f4").tobytes())
            for pano in features.street[node_id]:
                if pano.bins.shape != (features.sectors, d_pano):
                    raise FeatureError(f"node {node_id!r}: sector shape mismatch")
                fh.write(pano.bins.astype("<f4").tobytes())
    Path(str(path) + ".json").write_text(json.dumps(node_ids), encoding="utf-8")


def load_features(path: str | Path, graph: CityGraph) -> FeatureSet:
    """Load the binary feature format; every graph node must be covered."""
    path = Path(path)
    sidecar = Path(str(path) + ".json")
    if not sidecar.exists():
        raise FeatureError(f"missing node-id sidecar {sidecar}")
    node_ids = json.loads(sidecar.read_text(encoding="utf-8"))

    raw = path.read_bytes()
    if raw[:4] != _MAGIC:
        raise FeatureError(f"{path}: bad magic {raw[:4]!r}")
    version, count, dim, sectors, captures = struct.unpack_from("<5I", raw, 4)
    if version != _VERSION:
        raise FeatureError(f"{path}: unsupported version {version}")
    if count != len(node_ids):
        raise FeatureError(f"{path}: header count {count} != sidecar {len(node_ids)}")
    if dim % max(sectors, 1) != 0:
        raise FeatureError(f"{path}: dim {dim} not divisible by sectors {sectors}")

    d_pano = dim // sectors
    per_node = dim + captures * sectors * d_pano
    expected = 24 + 4 * count * per_node
    if len(raw) != expected:
        raise FeatureError(f"{path}: truncated file ({len(raw)} bytes, "
                           f"expected {expected})")

    data = np.frombuffer(raw, dtype="<f4", offset=24).astype(np.float64)
    sat: dict[str, np.ndarray] = {}
    street: dict[str, list[AngularFeature]] = {}
    for i, node_id in enumerate(node_ids):
        block = data[i * per_node:(i + 1) * per_node]
        sat[node_id] = block[:dim].copy()
        panos = block[dim:].reshape(captures, sectors, d_pano)
        street[node_id] = [AngularFeature(panos[c].copy()) for c in range(captures)]

    missing = sorted(set(graph.nodes) - set(node_ids))
    if missing:
        raise FeatureError(f"feature file missing node {missing[0]!r}")
    return FeatureSet(sat=sat, street=street, dim=dim, sectors=sectors,
                      captures=captures)
