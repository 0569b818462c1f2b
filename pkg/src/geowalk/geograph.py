"""Road-network graph model.

Cities are undirected graphs whose nodes are road junctions. Each node
carries geographic coordinates, a north-centred camera yaw, and the
north-aligned bearings towards its neighbouring junctions. Bearings are
always recomputed from coordinates, never trusted from files.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .rng import rng_for

# mean metres per degree of latitude; good to <0.5% at city scale
M_PER_DEG_LAT = 111_320.0


class GraphError(ValueError):
    """Malformed graph document or violated graph invariant."""


def wrap_degrees(angle: float) -> float:
    """Wrap an angle in degrees into (-180, 180]."""
    wrapped = math.fmod(angle + 180.0, 360.0)
    if wrapped <= 0.0:
        wrapped += 360.0
    return wrapped - 180.0


def angle_diff(a: float, b: float) -> float:
    """Signed difference a - b in degrees, wrapped into (-180, 180]."""
    return wrap_degrees(a - b)


@dataclass(frozen=True)
class GeoCoord:
    """Geographic coordinate; latitude in [-90, 90], longitude in (-180, 180]."""

    lat: float
    lon: float

    def __post_init__(self):
        if not -90.0 <= self.lat <= 90.0:
            raise GraphError(f"latitude {self.lat} out of range [-90, 90]")
        object.__setattr__(self, "lon", wrap_degrees(self.lon))


@dataclass
class NodeRecord:
    """A junction: position, camera yaw, and bearings to its neighbours."""

    id: str
    location: GeoCoord
    yaw: float
    neighbour_bearings: list[float] = field(default_factory=list)
    feature_ref: str = ""
    streetview_count: int = 5

    def __post_init__(self):
        self.yaw = wrap_degrees(self.yaw)
        if not self.feature_ref:
            self.feature_ref = self.id


def forward_azimuth(a: GeoCoord, b: GeoCoord) -> float:
    """Initial great-circle heading from ``a`` towards ``b``.

    Measured clockwise from true north, in degrees in [-180, 180].
    Raises GraphError for an identical ("degenerate") coordinate pair.
    """
    if a.lat == b.lat and a.lon == b.lon:
        raise GraphError(f"degenerate pair: identical coordinates {a}")
    phi1 = math.radians(a.lat)
    phi2 = math.radians(b.lat)
    dlam = math.radians(angle_diff(b.lon, a.lon))
    y = math.sin(dlam) * math.cos(phi2)
    x = math.cos(phi1) * math.sin(phi2) - math.sin(phi1) * math.cos(phi2) * math.cos(dlam)
    return math.degrees(math.atan2(y, x))


@dataclass
class CityGraph:
    """Immutable-after-construction road graph. Build via :meth:`from_parts`."""

    name: str
    nodes: dict[str, NodeRecord]
    edges: set[tuple[str, str]]
    _adjacency: dict[str, list[str]] = field(default_factory=dict, compare=False, repr=False)

    @classmethod
    def from_parts(cls, name: str, nodes: list[NodeRecord],
                   edges: list[tuple[str, str]]) -> "CityGraph":
        """Validate invariants, recompute neighbour bearings, build adjacency."""
        node_map: dict[str, NodeRecord] = {}
        for rec in nodes:
            if rec.id in node_map:
                raise GraphError(f"duplicate node id {rec.id!r}")
            node_map[rec.id] = rec

        edge_set: set[tuple[str, str]] = set()
        for a, b in edges:
            if a == b:
                raise GraphError(f"self-loop at node {a!r}")
            for end in (a, b):
                if end not in node_map:
                    raise GraphError(f"edge ({a!r}, {b!r}) references unknown node {end!r}")
            key = (a, b) if a < b else (b, a)
            if key in edge_set:
                raise GraphError(f"duplicate edge ({key[0]!r}, {key[1]!r})")
            edge_set.add(key)

        graph = cls(name=name, nodes=node_map, edges=edge_set)
        graph._adjacency = {nid: [] for nid in node_map}
        for a, b in sorted(edge_set):
            graph._adjacency[a].append(b)
            graph._adjacency[b].append(a)
        for nid in node_map:
            graph._adjacency[nid].sort()
            node_map[nid].neighbour_bearings = neighbor_bearings(graph, nid)
        return graph

    def neighbors(self, node_id: str) -> list[str]:
        if node_id not in self.nodes:
            raise GraphError(f"unknown node {node_id!r}")
        return self._adjacency[node_id]

    def degree(self, node_id: str) -> int:
        return len(self.neighbors(node_id))

    def node_ids(self) -> list[str]:
        return sorted(self.nodes)

    def is_connected(self) -> bool:
        if not self.nodes:
            return True
        start = next(iter(self.nodes))
        seen = {start}
        frontier = [start]
        while frontier:
            current = frontier.pop()
            for nb in self._adjacency[current]:
                if nb not in seen:
                    seen.add(nb)
                    frontier.append(nb)
        return len(seen) == len(self.nodes)


def neighbor_bearings(graph: CityGraph, node_id: str) -> list[float]:
    """Bearings from a node to each neighbour, ascending; one per incident edge."""
    node = graph.nodes.get(node_id)
    if node is None:
        raise GraphError(f"unknown node {node_id!r}")
    bearings = [forward_azimuth(node.location, graph.nodes[nb].location)
                for nb in graph._adjacency.get(node_id, [])]
    return sorted(bearings)


def load_graph(path: str | Path) -> CityGraph:
    """Load a city graph from the JSON document schema.

    Schema: {"name": str, "nodes": [{"id", "lat", "lon", "yaw",
    "streetview_count"}], "edges": [[id, id]]}. Neighbour bearings are
    recomputed from coordinates regardless of file contents.
    """
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise GraphError(f"cannot parse graph file {path}: {exc}") from exc
    if not isinstance(doc, dict) or "nodes" not in doc or "edges" not in doc:
        raise GraphError(f"graph file {path} missing 'nodes'/'edges'")

    nodes = []
    for entry in doc["nodes"]:
        try:
            node_id = str(entry["id"])
            coord = GeoCoord(float(entry["lat"]), float(entry["lon"]))
            yaw = float(entry.get("yaw", 0.0))
        except GraphError as exc:
            raise GraphError(f"node {entry.get('id')!r}: {exc}") from exc
        except (KeyError, TypeError, ValueError) as exc:
            raise GraphError(f"malformed node entry {entry!r}: {exc}") from exc
        nodes.append(NodeRecord(id=node_id, location=coord, yaw=yaw,
                                streetview_count=int(entry.get("streetview_count", 5))))

    edges = []
    for pair in doc["edges"]:
        if not isinstance(pair, (list, tuple)) or len(pair) != 2:
            raise GraphError(f"malformed edge entry {pair!r}")
        edges.append((str(pair[0]), str(pair[1])))

    return CityGraph.from_parts(str(doc.get("name", path.stem)), nodes, edges)


def save_graph(graph: CityGraph, path: str | Path) -> None:
    """Write a graph in the JSON document schema (round-trips with load_graph)."""
    doc = {
        "name": graph.name,
        "nodes": [
            {
                "id": nid,
                "lat": graph.nodes[nid].location.lat,
                "lon": graph.nodes[nid].location.lon,
                "yaw": graph.nodes[nid].yaw,
                "streetview_count": graph.nodes[nid].streetview_count,
            }
            for nid in graph.node_ids()
        ],
        "edges": [list(edge) for edge in sorted(graph.edges)],
    }
    Path(path).write_text(json.dumps(doc, indent=1), encoding="utf-8")


@dataclass
class GraphSplit:
    """Disjoint train/validation subgraphs plus the removed crossing edges."""

    train: CityGraph
    validation: CityGraph
    edge_cut: set[tuple[str, str]]


def _subgraph(graph: CityGraph, keep: set[str], name_suffix: str) -> CityGraph:
    nodes = [NodeRecord(id=nid, location=graph.nodes[nid].location,
                        yaw=graph.nodes[nid].yaw,
                        streetview_count=graph.nodes[nid].streetview_count)
             for nid in sorted(keep)]
    edges = [e for e in sorted(graph.edges) if e[0] in keep and e[1] in keep]
    return CityGraph.from_parts(f"{graph.name}-{name_suffix}", nodes, edges)


def split_graph(graph: CityGraph, val_fraction: float, seed: int) -> GraphSplit:
    """Carve a validation region out of one corner of the bounding box.

    The validation set holds round(val_fraction * N) nodes nearest a
    seed-chosen corner; edges crossing the cut are removed from both sides.
    """
    if not 0.0 < val_fraction < 0.5:
        raise GraphError(f"val_fraction {val_fraction} outside (0, 0.5)")
    if len(graph.nodes) < 8:
        raise GraphError(f"graph too small to split ({len(graph.nodes)} nodes)")
    if not graph.is_connected():
        raise GraphError("split requires a connected graph")

    lats = [n.location.lat for n in graph.nodes.values()]
    lons = [n.location.lon for n in graph.nodes.values()]
    lat_lo, lat_hi = min(lats), max(lats)
    lon_lo, lon_hi = min(lons), max(lons)
    lat_span = max(lat_hi - lat_lo, 1e-12)
    lon_span = max(lon_hi - lon_lo, 1e-12)

    corner = int(rng_for(seed, "split-corner").integers(4))
    corner_u = (0.0, 1.0, 0.0, 1.0)[corner]
    corner_v = (0.0, 0.0, 1.0, 1.0)[corner]

    def corner_distance(nid: str) -> float:
        loc = graph.nodes[nid].location
        u = (loc.lon - lon_lo) / lon_span
        v = (loc.lat - lat_lo) / lat_span
        return max(abs(u - corner_u), abs(v - corner_v))

    n_val = round(val_fraction * len(graph.nodes))
    n_val = max(1, min(n_val, len(graph.nodes) - 1))
    ordered = sorted(graph.node_ids(), key=lambda nid: (corner_distance(nid), nid))
    val_ids = set(ordered[:n_val])
    train_ids = set(graph.nodes) - val_ids

    cut = {e for e in graph.edges if (e[0] in val_ids) != (e[1] in val_ids)}
    return GraphSplit(train=_subgraph(graph, train_ids, "train"),
                      validation=_subgraph(graph, val_ids, "val"),
                      edge_cut=cut)
