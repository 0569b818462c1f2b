"""Two-branch message-passing embedding network.

Street and satellite walks pass through structurally identical stacks of
message-passing layers with independent weights. Each layer aggregates a
node's features with its walk neighbours (the walk's path graph only), then
applies a linear map and activation:

    h[k+1](j) = act(W[k] @ AGG({h[k](u) : u in closed nbhd of j}) + b[k])

Hidden layers use ReLU, the final layer is linear, and retained target
embeddings are L2-normalised. The street branch additionally owns a learned
pointwise input projection lifting pooled panorama windows (d_pano wide)
to the stack's input width. Gradients are hand-written reverse mode.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geograph import CityGraph, forward_azimuth
from .rng import rng_for
from .synth import AngularFeature, FeatureSet, fov_window
from .walks import Walk, enumerate_walks

DEFAULT_LAYER_DIMS = (768, 256, 64)

AGGREGATORS = ("mean", "sum")


@dataclass
class LayerParams:
    weights: np.ndarray  # (d_out, d_in)
    bias: np.ndarray     # (d_out,)


@dataclass
class ModelParams:
    """Independent street/satellite stacks sharing one layer schedule."""

    street_lift: LayerParams
    street_branch: list[LayerParams]
    sat_branch: list[LayerParams]
    layer_dims: tuple[int, ...]
    d_pano: int
    aggregator: str = "mean"


@dataclass
class WalkBatch:
    """Feature triplets for a batch of walks.

    anchor i (street windows) and positive i (satellite vectors) cover the
    same node sequence; negative i targets a different node.
    """

    anchor_feats: list[np.ndarray]    # each (l_i, d_pano)
    positive_feats: list[np.ndarray]  # each (l_i, D)
    negative_feats: list[np.ndarray]  # each (l_neg_i, D)
    anchor_targets: list[str] = field(default_factory=list)
    negative_targets: list[str] = field(default_factory=list)

    def __post_init__(self):
        if self.anchor_targets and self.negative_targets:
            for i, (a, n) in enumerate(zip(self.anchor_targets, self.negative_targets)):
                if a == n:
                    raise ValueError(f"triplet {i}: negative target equals anchor target {a!r}")

    def __len__(self) -> int:
        return len(self.anchor_feats)


def init_model(layer_dims: tuple[int, ...] = DEFAULT_LAYER_DIMS,
               d_pano: int = 96, seed: int = 0,
               aggregator: str = "mean") -> ModelParams:
    """He-initialised parameters; both branches drawn independently."""
    if aggregator not in AGGREGATORS:
        raise ValueError(f"aggregator must be one of {AGGREGATORS}")
    if len(layer_dims) < 2:
        raise ValueError("need at least one layer (two dims)")
    rng = rng_for(seed, "init")

    def layer(d_out: int, d_in: int) -> LayerParams:
        scale = np.sqrt(2.0 / d_in)
        return LayerParams(weights=rng.standard_normal((d_out, d_in)) * scale,
                           bias=np.zeros(d_out))

    return ModelParams(
        street_lift=layer(layer_dims[0], d_pano),
        street_branch=[layer(layer_dims[k + 1], layer_dims[k])
                       for k in range(len(layer_dims) - 1)],
        sat_branch=[layer(layer_dims[k + 1], layer_dims[k])
                    for k in range(len(layer_dims) - 1)],
        layer_dims=tuple(layer_dims),
        d_pano=d_pano,
        aggregator=aggregator,
    )


def param_arrays(params: ModelParams) -> list[np.ndarray]:
    """All parameter arrays in a fixed traversal order."""
    arrays = [params.street_lift.weights, params.street_lift.bias]
    for layer in params.street_branch + params.sat_branch:
        arrays.extend([layer.weights, layer.bias])
    return arrays


def zero_grads(params: ModelParams) -> ModelParams:
    """A gradient container with the same shapes as ``params``, zero-filled."""
    def z(layer: LayerParams) -> LayerParams:
        return LayerParams(np.zeros_like(layer.weights), np.zeros_like(layer.bias))
    return ModelParams(
        street_lift=z(params.street_lift),
        street_branch=[z(l) for l in params.street_branch],
        sat_branch=[z(l) for l in params.sat_branch],
        layer_dims=params.layer_dims,
        d_pano=params.d_pano,
        aggregator=params.aggregator,
    )


def agg_matrix(length: int, aggregator: str) -> np.ndarray:
    """Aggregation operator over a walk's path graph (closed neighbourhood)."""
    mat = np.eye(length)
    for i in range(length - 1):
        mat[i, i + 1] = 1.0
        mat[i + 1, i] = 1.0
    if aggregator == "mean":
        mat /= mat.sum(axis=1, keepdims=True)
    elif aggregator != "sum":
        raise ValueError(f"aggregator must be one of {AGGREGATORS}")
    return mat


def _forward_stack(branch: list[LayerParams], feats: np.ndarray,
                   agg: np.ndarray) -> tuple[np.ndarray, list[tuple[np.ndarray, np.ndarray]]]:
    """Batched branch forward; feats (B, l, d_in). Returns (H, layer caches)."""
    h = feats
    caches = []
    last = len(branch) - 1
    for k, layer in enumerate(branch):
        h_agg = np.matmul(agg, h)  # (l,l) broadcast over the batch
        z = h_agg @ layer.weights.T + layer.bias
        h = z if k == last else np.maximum(z, 0.0)
        caches.append((h_agg, z))
    return h, caches


def forward_branch(branch: list[LayerParams], walk_features: np.ndarray,
                   aggregator: str = "mean") -> np.ndarray:
    """Per-node final-layer embeddings for one walk; feats (l, d_in).

    The retained target embedding is row -1 (the walk's final node).
    """
    feats = np.asarray(walk_features, dtype=np.float64)
    if feats.ndim != 2:
        raise ValueError(f"walk_features must be (length, dim), got {feats.shape}")
    if feats.shape[1] != branch[0].weights.shape[1]:
        raise ValueError(f"feature dim {feats.shape[1]} does not match layer "
                         f"input dim {branch[0].weights.shape[1]}")
    agg = agg_matrix(feats.shape[0], aggregator)
    h, _ = _forward_stack(branch, feats[None, :, :], agg)
    return h[0]


def l2_normalize(vec: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(vec, axis=-1, keepdims=True)
    return vec / np.maximum(norm, 1e-12)


def triplet_loss(anchor: np.ndarray, positive: np.ndarray, negative: np.ndarray,
                 margin: float) -> float:
    """Hinged triplet objective on embedding vectors.

    max(0, ||a-p||^2 - ||a-n||^2 + margin).
    """
    d_pos = float(np.sum((anchor - positive) ** 2))
    d_neg = float(np.sum((anchor - negative) ** 2))
    return max(0.0, d_pos - d_neg + margin)


def _apply_lift(lift: LayerParams, feats: np.ndarray) -> np.ndarray:
    """Pointwise linear projection of per-node features (B, l, d_pano) -> (B, l, D)."""
    return feats @ lift.weights.T + lift.bias


def _normalize_rows(mat: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.maximum(np.linalg.norm(mat, axis=1, keepdims=True), 1e-12)
    return mat / norms, norms


def _normalize_backward(g_eta: np.ndarray, eta: np.ndarray,
                        norms: np.ndarray) -> np.ndarray:
    inner = np.sum(g_eta * eta, axis=1, keepdims=True)
    return (g_eta - inner * eta) / norms


def _flat_outer(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """sum_b sum_l outer(a[b,l], b[b,l]) as one matmul."""
    return a.reshape(-1, a.shape[-1]).T @ b.reshape(-1, b.shape[-1])


def _backward_stack(branch: list[LayerParams], caches, g_h: np.ndarray,
                    agg: np.ndarray, g_branch: list[LayerParams]) -> np.ndarray:
    """Backprop through one branch stack; returns gradient wrt branch input."""
    last = len(branch) - 1
    for k in range(last, -1, -1):
        h_agg, z = caches[k]
        g_z = g_h if k == last else g_h * (z > 0.0)
        g_branch[k].weights += _flat_outer(g_z, h_agg)
        g_branch[k].bias += g_z.sum(axis=(0, 1))
        g_agg = g_z @ branch[k].weights
        g_h = np.matmul(agg.T, g_agg)
    return g_h


def backward(batch: WalkBatch, params: ModelParams,
             margin: float) -> tuple[float, ModelParams]:
    """Mean triplet loss over the batch and its gradients.

    Gradients match ``params`` in shape; triplets with an inactive hinge
    contribute zero. Walks of different lengths are processed in buckets.
    """
    n_total = len(batch)
    if n_total == 0:
        raise ValueError("empty batch")
    grads = zero_grads(params)
    total_loss = 0.0

    buckets: dict[tuple[int, int], list[int]] = {}
    for i in range(n_total):
        key = (batch.anchor_feats[i].shape[0], batch.negative_feats[i].shape[0])
        buckets.setdefault(key, []).append(i)

    for (l_anc, l_neg), idx in sorted(buckets.items()):
        anc = np.stack([batch.anchor_feats[i] for i in idx]).astype(np.float64)
        pos = np.stack([batch.positive_feats[i] for i in idx]).astype(np.float64)
        neg = np.stack([batch.negative_feats[i] for i in idx]).astype(np.float64)
        agg_a = agg_matrix(l_anc, params.aggregator)
        agg_n = agg_matrix(l_neg, params.aggregator)

        lifted = _apply_lift(params.street_lift, anc)
        h_a, cache_a = _forward_stack(params.street_branch, lifted, agg_a)
        h_p, cache_p = _forward_stack(params.sat_branch, pos, agg_a)
        h_n, cache_n = _forward_stack(params.sat_branch, neg, agg_n)

        t_a, t_p, t_n = h_a[:, -1], h_p[:, -1], h_n[:, -1]
        eta_a, norm_a = _normalize_rows(t_a)
        eta_p, norm_p = _normalize_rows(t_p)
        eta_n, norm_n = _normalize_rows(t_n)

        d_pos = np.sum((eta_a - eta_p) ** 2, axis=1)
        d_neg = np.sum((eta_a - eta_n) ** 2, axis=1)
        raw = d_pos - d_neg + margin
        active = (raw > 0.0).astype(np.float64)
        total_loss += float(np.sum(np.maximum(raw, 0.0)))

        scale = (active / n_total)[:, None]
        g_eta_a = 2.0 * (eta_n - eta_p) * scale
        g_eta_p = -2.0 * (eta_a - eta_p) * scale
        g_eta_n = 2.0 * (eta_a - eta_n) * scale

        def back_targets(g_eta, eta, norms, h):
            g_t = _normalize_backward(g_eta, eta, norms)
            g_h = np.zeros_like(h)
            g_h[:, -1] = g_t
            return g_h

        g_h_a = back_targets(g_eta_a, eta_a, norm_a, h_a)
        g_h_p = back_targets(g_eta_p, eta_p, norm_p, h_p)
        g_h_n = back_targets(g_eta_n, eta_n, norm_n, h_n)

        g_lifted = _backward_stack(params.street_branch, cache_a, g_h_a,
                                   agg_a, grads.street_branch)
        _backward_stack(params.sat_branch, cache_p, g_h_p, agg_a, grads.sat_branch)
        _backward_stack(params.sat_branch, cache_n, g_h_n, agg_n, grads.sat_branch)

        grads.street_lift.weights += _flat_outer(g_lifted, anc)
        grads.street_lift.bias += g_lifted.sum(axis=(0, 1))

    return total_loss / n_total, grads


def walk_travel_yaw(graph: CityGraph, walk: Walk) -> float:
    """Vehicle heading arriving at the walk's target.

    Bearing from the penultimate node into the target; the target's stored
    yaw for single-node walks.
    """
    if walk.length == 1:
        return graph.nodes[walk.target_id].yaw
    prev, last = walk.node_ids[-2], walk.node_ids[-1]
    return forward_azimuth(graph.nodes[prev].location, graph.nodes[last].location)


def walk_node_yaws(graph: CityGraph, walk: Walk, yaw_mode: str = "travel") -> list[float]:
    """Per-node camera headings along a walk.

    ``travel``: direction of motion into each node (stored yaw for the first
    node). ``stored``: every node's stored yaw.
    """
    if yaw_mode == "stored":
        return [graph.nodes[nid].yaw for nid in walk.node_ids]
    if yaw_mode != "travel":
        raise ValueError(f"yaw_mode must be 'travel' or 'stored', got {yaw_mode!r}")
    yaws = [graph.nodes[walk.node_ids[0]].yaw]
    for prev, cur in zip(walk.node_ids, walk.node_ids[1:]):
        yaws.append(forward_azimuth(graph.nodes[prev].location,
                                    graph.nodes[cur].location))
    return yaws


def query_walk_features(graph: CityGraph, walk: Walk, features: FeatureSet,
                        fov: float, captures: list[int] | None = None,
                        yaw_mode: str = "travel") -> np.ndarray:
    """FOV-windowed street features for a query walk; (l, d_pano)."""
    yaws = walk_node_yaws(graph, walk, yaw_mode)
    rows = []
    for i, nid in enumerate(walk.node_ids):
        capture = 0 if captures is None else captures[i]
        pano: AngularFeature = features.street[nid][capture]
        rows.append(fov_window(pano, fov, yaws[i]))
    return np.stack(rows)


def embed_query(params: ModelParams, graph: CityGraph, walk: Walk,
                features: FeatureSet, fov: float,
                captures: list[int] | None = None,
                yaw_mode: str = "travel") -> np.ndarray:
    """Street-branch target embedding of a query walk, L2-normalised."""
    windows = query_walk_features(graph, walk, features, fov, captures, yaw_mode)
    lifted = _apply_lift(params.street_lift, windows[None, :, :])
    h, _ = _forward_stack(params.street_branch, lifted,
                          agg_matrix(walk.length, params.aggregator))
    return l2_normalize(h[0, -1])


def embed_street_features(params: ModelParams,
                          feats_list: list[np.ndarray]) -> np.ndarray:
    """Street-branch target embeddings for pre-windowed walks; (n, d_out).

    Accepts mixed walk lengths; walks are processed in equal-length buckets.
    """
    out = np.zeros((len(feats_list), params.layer_dims[-1]))
    buckets: dict[int, list[int]] = {}
    for i, feats in enumerate(feats_list):
        buckets.setdefault(feats.shape[0], []).append(i)
    for length, idx in sorted(buckets.items()):
        stacked = np.stack([feats_list[i] for i in idx]).astype(np.float64)
        lifted = _apply_lift(params.street_lift, stacked)
        h, _ = _forward_stack(params.street_branch, lifted,
                              agg_matrix(length, params.aggregator))
        out[idx] = l2_normalize(h[:, -1])
    return out


def embed_sat_walks(params: ModelParams, walks: list[Walk], features: FeatureSet,
                    chunk_size: int = 1024) -> np.ndarray:
    """Satellite-branch target embeddings for a list of walks; (n, d_out)."""
    out = np.zeros((len(walks), params.layer_dims[-1]))
    if not walks:
        return out
    node_order = sorted({nid for w in walks for nid in w.node_ids})
    row_of = {nid: i for i, nid in enumerate(node_order)}
    sat_matrix = np.stack([features.sat[nid] for nid in node_order])
    buckets: dict[int, list[int]] = {}
    for i, w in enumerate(walks):
        buckets.setdefault(w.length, []).append(i)
    for length, idx in sorted(buckets.items()):
        agg = agg_matrix(length, params.aggregator)
        rows = np.array([[row_of[nid] for nid in walks[i].node_ids] for i in idx])
        for start in range(0, len(idx), chunk_size):
            part = idx[start:start + chunk_size]
            h, _ = _forward_stack(params.sat_branch,
                                  sat_matrix[rows[start:start + chunk_size]], agg)
            out[part] = l2_normalize(h[:, -1])
    return out


def embed_references(params: ModelParams, graph: CityGraph, features: FeatureSet,
                     walk_length: int) -> dict[str, tuple[np.ndarray, str]]:
    """Embed the exhaustive reference walks via the satellite branch.

    Returns walk id -> (embedding, target node id).
    """
    all_walks = [w for nid in graph.node_ids()
                 for w in enumerate_walks(graph, nid, walk_length)]
    embeddings = embed_sat_walks(params, all_walks, features)
    return {w.id: (embeddings[i], w.target_id) for i, w in enumerate(all_walks)}


_MAGIC = b"SGBM"
_VERSION = 1
_AGG_CODES = {"mean": 0, "sum": 1}


def save_checkpoint(params: ModelParams, path: str | Path) -> None:
    """Little-endian binary checkpoint: header, street lift, both branches (f32)."""
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<4I", _VERSION, _AGG_CODES[params.aggregator],
                             params.d_pano, len(params.layer_dims)))
        fh.write(struct.pack(f"<{len(params.layer_dims)}I", *params.layer_dims))
        for layer in [params.street_lift] + params.street_branch + params.sat_branch:
            fh.write(layer.weights.astype("<f4").tobytes())
            fh.write(layer.bias.astype("<f4").tobytes())


def load_checkpoint(path: str | Path) -> ModelParams:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != _MAGIC:
        raise ValueError(f"{path}: bad checkpoint magic {raw[:4]!r}")
    version, agg_code, d_pano, n_dims = struct.unpack_from("<4I", raw, 4)
    if version != _VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    dims = struct.unpack_from(f"<{n_dims}I", raw, 20)
    aggregator = {v: k for k, v in _AGG_CODES.items()}[agg_code]
    offset = 20 + 4 * n_dims

    def read_layer(d_out: int, d_in: int) -> LayerParams:
        nonlocal offset
        need = 4 * (d_out * d_in + d_out)
        if offset + need > len(raw):
            raise ValueError(f"{path}: truncated checkpoint")
        w = np.frombuffer(raw, dtype="<f4", count=d_out * d_in,
                          offset=offset).astype(np.float64).reshape(d_out, d_in)
        b = np.frombuffer(raw, dtype="<f4", count=d_out,
                          offset=offset + 4 * d_out * d_in).astype(np.float64)
        offset += need
        return LayerParams(w.copy(), b.copy())

    lift = read_layer(dims[0], d_pano)
    street = [read_layer(dims[k + 1], dims[k]) for k in range(n_dims - 1)]
    sat = [read_layer(dims[k + 1], dims[k]) for k in range(n_dims - 1)]
    return ModelParams(street_lift=lift, street_branch=street, sat_branch=sat,
                       layer_dims=tuple(int(d) for d in dims), d_pano=d_pano,
                       aggregator=aggregator)
