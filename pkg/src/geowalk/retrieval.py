"""Exact nearest-neighbour index over reference embeddings.

Median-split KD-tree with branch-and-bound pruning and vectorised leaf
scans. Results are exact under squared Euclidean distance; ties are broken
by ascending walk id so retrieval is reproducible regardless of build order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_LEAF_SIZE = 32


class IndexError_(ValueError):
    """Invalid index construction or query."""


@dataclass(frozen=True)
class RankedHit:
    node_id: str
    walk_id: str
    distance_sq: float


@dataclass
class RetrievalResult:
    query_id: str
    ranked: list[RankedHit]

    def node_ranking(self) -> list[str]:
        """Distinct target nodes in best-rank order."""
        seen: set[str] = set()
        order = []
        for hit in self.ranked:
            if hit.node_id not in seen:
                seen.add(hit.node_id)
                order.append(hit.node_id)
        return order


class _TreeNode:
    __slots__ = ("axis", "threshold", "left", "right", "indices")

    def __init__(self, axis=-1, threshold=0.0, left=None, right=None, indices=None):
        self.axis = axis
        self.threshold = threshold
        self.left = left
        self.right = right
        self.indices = indices  # leaf only


class EmbeddingIndex:
    """Immutable KD-tree over (embedding, walk id, target node id) points."""

    def __init__(self, points: np.ndarray, walk_ids: list[str], node_ids: list[str]):
        if points.size == 0:
            raise IndexError_("cannot build an index from no embeddings")
        if not np.isfinite(points).all():
            raise IndexError_("non-finite embedding value in index input")
        if len(set(walk_ids)) != len(walk_ids):
            raise IndexError_("walk ids must be unique")
        # canonical layout: sort by walk id so the tie-break rank is the row index
        order = sorted(range(len(walk_ids)), key=lambda i: walk_ids[i])
        self.points = np.ascontiguousarray(points[order], dtype=np.float64)
        self.walk_ids = [walk_ids[i] for i in order]
        self.node_ids = [node_ids[i] for i in order]
        self._root = self._build(np.arange(len(self.walk_ids)), 0)

    def __len__(self) -> int:
        return len(self.walk_ids)

    def _build(self, indices: np.ndarray, depth: int) -> _TreeNode:
        if len(indices) <= _LEAF_SIZE:
            return _TreeNode(indices=indices)
        block = self.points[indices]
        axis = int(np.argmax(block.max(axis=0) - block.min(axis=0)))
        mid = len(indices) // 2
        part = np.argpartition(block[:, axis], mid)
        left, right = indices[part[:mid]], indices[part[mid:]]
        threshold = float(self.points[right, axis].min())
        return _TreeNode(axis=axis, threshold=threshold,
                         left=self._build(left, depth + 1),
                         right=self._build(right, depth + 1))

    def _query(self, q: np.ndarray, k: int) -> list[tuple[float, int]]:
        # best: sorted list of (d2, row) under lexicographic order, length <= k
        best: list[tuple[float, int]] = []

        def worst() -> tuple[float, int]:
            return best[-1]

        def consider(d2: float, row: int) -> None:
            item = (d2, row)
            if len(best) < k:
                best.append(item)
                best.sort()
            elif item < worst():
                best[-1] = item
                best.sort()

        def visit(node: _TreeNode) -> None:
            if node.indices is not None:
                rows = node.indices
                d2 = np.sum((self.points[rows] - q) ** 2, axis=1)
                # lexicographic (distance, row) order makes the early break safe
                for j in np.lexsort((rows, d2)):
                    if len(best) == k and (float(d2[j]), int(rows[j])) >= worst():
                        break
                    consider(float(d2[j]), int(rows[j]))
                return
            diff = q[node.axis] - node.threshold
            near, far = (node.left, node.right) if diff < 0 else (node.right, node.left)
            visit(near)
            # the splitting plane distance lower-bounds the far side; descend on
            # ties because a tied candidate may still win on walk id
            if len(best) < k or diff * diff <= worst()[0]:
                visit(far)

        visit(self._root)
        return best


def build_index(embeddings: dict[str, tuple[np.ndarray, str]]) -> EmbeddingIndex:
    """Index a map of walk id -> (embedding, target node id)."""
    if not embeddings:
        raise IndexError_("cannot build an index from no embeddings")
    walk_ids = list(embeddings)
    vectors = [np.asarray(embeddings[w][0], dtype=np.float64) for w in walk_ids]
    dims = {v.shape for v in vectors}
    if len(dims) != 1 or vectors[0].ndim != 1:
        raise IndexError_(f"embeddings must share one vector shape, got {dims}")
    points = np.stack(vectors)
    node_ids = [embeddings[w][1] for w in walk_ids]
    return EmbeddingIndex(points, walk_ids, node_ids)


def query_topk(index: EmbeddingIndex, q: np.ndarray, k: int,
               query_id: str = "") -> RetrievalResult:
    """Exact k nearest points by squared L2, ties broken by ascending walk id."""
    if k < 1:
        raise IndexError_(f"k must be >= 1, got {k}")
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (index.points.shape[1],):
        raise IndexError_(f"query shape {q.shape} does not match index "
                          f"dimension {index.points.shape[1]}")
    hits = index._query(q, min(k, len(index)))
    ranked = [RankedHit(node_id=index.node_ids[row], walk_id=index.walk_ids[row],
                        distance_sq=d2) for d2, row in hits]
    return RetrievalResult(query_id=query_id, ranked=ranked)
