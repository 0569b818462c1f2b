"""Bearing vectors: quantised junction road directions and cyclic matching.

A junction's neighbour bearings are quantised into a V-bit cyclic binary
code with bin 0 centred on the reference heading (edges at +/- half a bin,
so a forward-facing road sits mid-bin). A retrieval candidate is compatible
when some cyclic shift of its reference code reproduces the query code; if
the vehicle yaw is known only the shift implied by the yaw is admissible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geograph import CityGraph, GraphError, angle_diff
from .retrieval import RankedHit, RetrievalResult

FILTER_MODES = ("none", "bvm", "bvm_yaw")

# below this field of view too few roads are visible for matching
MIN_BVM_FOV = 180.0


class BearingError(ValueError):
    """Invalid bearing-vector construction or comparison."""


@dataclass(frozen=True)
class BearingVector:
    """V-bit cyclic code; bit v marks a road in angular bin v."""

    bits: tuple[int, ...]

    def __post_init__(self):
        if len(self.bits) < 2:
            raise BearingError(f"need at least 2 bins, got {len(self.bits)}")
        if any(b not in (0, 1) for b in self.bits):
            raise BearingError(f"bits must be 0/1: {self.bits}")

    @property
    def bins(self) -> int:
        return len(self.bits)

    def bitstring(self) -> str:
        return "".join(str(b) for b in self.bits)

    @classmethod
    def from_bitstring(cls, text: str) -> "BearingVector":
        return cls(tuple(int(c) for c in text))


def bin_width(bins: int) -> float:
    return 360.0 / bins


def yaw_shift(yaw: float, bins: int) -> int:
    """The cyclic shift implied by a vehicle yaw: round(yaw / bin width) mod V."""
    width = bin_width(bins)
    return int(np.floor(yaw / width + 0.5)) % bins


def snap_heading(yaw: float, bins: int) -> float:
    """Yaw rounded to the nearest bin boundary multiple.

    Query vectors are quantised relative to the snapped heading so that
    relative quantisation commutes exactly with bit rotation; otherwise a
    bearing near a bin edge could cross it between frames and the true node
    would fail the single-shift yaw test.
    """
    return yaw_shift(yaw, bins) * bin_width(bins)


def quantise_bearings(bearings: list[float], bins: int,
                      reference_heading: float = 0.0) -> BearingVector:
    """Quantise bearings (degrees, relative to ``reference_heading``) into V bins.

    Bin v spans [v*w - w/2, v*w + w/2) in relative heading, lower edge
    inclusive, where w = 360/V.
    """
    if bins < 2:
        raise BearingError(f"need at least 2 bins, got {bins}")
    width = bin_width(bins)
    bits = [0] * bins
    for bearing in bearings:
        relative = (bearing - reference_heading + width / 2.0) % 360.0
        bits[int(relative // width) % bins] = 1
    return BearingVector(tuple(bits))


def rotate(vector: BearingVector, shift: int) -> BearingVector:
    """Cyclic shift: output bit i is input bit (i + shift) mod V."""
    v = vector.bins
    return BearingVector(tuple(vector.bits[(i + shift) % v] for i in range(v)))


def _check_bins(query: BearingVector, ref: BearingVector) -> None:
    if query.bins != ref.bins:
        raise BearingError(f"bin count mismatch: {query.bins} vs {ref.bins}")


def compatible(query: BearingVector, ref: BearingVector) -> bool:
    """True iff some cyclic shift of ``ref`` equals ``query``."""
    _check_bins(query, ref)
    if sum(query.bits) != sum(ref.bits):
        return False
    return any(query == rotate(ref, s) for s in range(ref.bins))


def compatible_yaw(query: BearingVector, ref: BearingVector,
                   vehicle_yaw: float) -> bool:
    """True iff ``ref`` equals ``query`` at the single shift implied by the yaw."""
    _check_bins(query, ref)
    return query == rotate(ref, yaw_shift(vehicle_yaw, query.bins))


def reference_bearing_vectors(graph: CityGraph, bins: int) -> dict[str, BearingVector]:
    """North-aligned bearing vector of every junction."""
    return {nid: quantise_bearings(graph.nodes[nid].neighbour_bearings, bins)
            for nid in graph.node_ids()}


def query_bearing_vector(graph: CityGraph, node_id: str, yaw: float, bins: int,
                         fov: float = 360.0,
                         rng: np.random.Generator | None = None,
                         bearing_jitter: float = 0.0,
                         miss_prob: float = 0.0) -> BearingVector:
    """Vehicle-frame bearing vector observed at a junction.

    Bearings come from ground-truth graph geometry; with a limited field of
    view only roads within +/- fov/2 of the heading are visible. The optional
    error model jitters each bearing and drops roads with ``miss_prob`` for
    robustness experiments; by default the observation is exact.
    """
    if node_id not in graph.nodes:
        raise GraphError(f"unknown node {node_id!r}")
    bearings = list(graph.nodes[node_id].neighbour_bearings)
    if fov < 360.0:
        bearings = [b for b in bearings if abs(angle_diff(b, yaw)) <= fov / 2.0]
    if rng is not None and (bearing_jitter > 0.0 or miss_prob > 0.0):
        kept = []
        for b in bearings:
            if miss_prob > 0.0 and rng.random() < miss_prob:
                continue
            kept.append(b + (rng.normal(0.0, bearing_jitter) if bearing_jitter else 0.0))
        bearings = kept
    return quantise_bearings(bearings, bins, reference_heading=snap_heading(yaw, bins))


def filter_retrievals(result: RetrievalResult, query_bv: BearingVector,
                      ref_bvs: dict[str, BearingVector], mode: str,
                      yaw: float | None, k: int) -> RetrievalResult:
    """Drop candidates with incompatible bearing vectors, keep distance order.

    Returns at most k survivors; when fewer survive the shorter list is
    returned with no backfill (an empty result counts as a retrieval miss).
    """
    if mode not in FILTER_MODES:
        raise BearingError(f"mode must be one of {FILTER_MODES}, got {mode!r}")
    if mode == "none":
        return RetrievalResult(query_id=result.query_id, ranked=result.ranked[:k])
    if mode == "bvm_yaw" and yaw is None:
        raise BearingError("mode 'bvm_yaw' requires the vehicle yaw")

    kept: list[RankedHit] = []
    for hit in result.ranked:
        ref = ref_bvs.get(hit.node_id)
        if ref is None:
            raise BearingError(f"no reference bearing vector for node {hit.node_id!r}")
        if mode == "bvm":
            ok = compatible(query_bv, ref)
        else:
            ok = compatible_yaw(query_bv, ref, yaw)
        if ok:
            kept.append(hit)
            if len(kept) == k:
                break
    return RetrievalResult(query_id=result.query_id, ranked=kept)
