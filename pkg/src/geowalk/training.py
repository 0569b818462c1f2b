"""Triplet training loop.

Each epoch builds one triplet per training node: a sampled street walk as
the anchor, the matching satellite walk as the positive, and a satellite
walk ending at a different node as the negative. Triplets are processed in
seeded minibatches with an AdamW step per batch. Validation Top-1 retrieval
drives a reduce-on-plateau schedule and selects the returned parameters.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .geograph import GraphSplit
from .model import (DEFAULT_LAYER_DIMS, ModelParams, WalkBatch, backward,
                    embed_sat_walks, embed_street_features, init_model,
                    param_arrays, query_walk_features)
from .rng import rng_for
from .walks import enumerate_walks, sample_walk

TRAIN_FOV = 360.0


@dataclass
class TrainConfig:
    epochs: int = 100
    learning_rate: float = 1e-4
    margin: float = 0.2
    walk_length: int = 4
    weight_decay: float = 1e-4
    batch_size: int = 64
    plateau_patience: int = 5
    plateau_factor: float = 0.5
    seed: int = 0
    layer_dims: tuple[int, ...] = DEFAULT_LAYER_DIMS
    aggregator: str = "mean"
    captures: int | None = None  # train on the first c captures only; None = all

    def __post_init__(self):
        if self.epochs < 1 or self.walk_length < 1 or self.batch_size < 1:
            raise ValueError("epochs, walk_length, and batch_size must be >= 1")
        if self.margin <= 0:
            raise ValueError(f"margin must be > 0, got {self.margin}")
        if self.learning_rate < 0 or self.weight_decay < 0:
            raise ValueError("learning_rate and weight_decay must be >= 0")
        if not 0.0 < self.plateau_factor <= 1.0:
            raise ValueError(f"plateau_factor must be in (0, 1], got {self.plateau_factor}")


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_top1: float
    learning_rate: float


@dataclass
class TrainResult:
    params: ModelParams        # snapshot at best validation Top-1
    log: list[EpochStats]
    best_epoch: int
    final_params: ModelParams


class AdamW:
    """Adaptive-moment optimiser with decoupled weight decay."""

    def __init__(self, lr: float, weight_decay: float = 0.0,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m: list[np.ndarray] | None = None
        self._v: list[np.ndarray] | None = None

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        if self._m is None:
            self._m = [np.zeros_like(p) for p in params]
            self._v = [np.zeros_like(p) for p in params]
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self._m, self._v):
            p *= 1.0 - self.lr * self.weight_decay
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def _sample_capture_indices(rng: np.random.Generator, length: int,
                            n_captures: int) -> list[int]:
    return [int(c) for c in rng.integers(0, n_captures, size=length)]


@dataclass
class _ValProbe:
    """Fixed validation queries; embeddings recomputed as params change."""

    query_feats: list[np.ndarray] = field(default_factory=list)
    query_truth: list[str] = field(default_factory=list)
    ref_walks: list = field(default_factory=list)
    ref_targets: list[str] = field(default_factory=list)

    @classmethod
    def build(cls, split: GraphSplit, features, config: TrainConfig,
              n_captures: int) -> "_ValProbe":
        probe = cls()
        val = split.validation
        for nid in val.node_ids():
            for w in enumerate_walks(val, nid, config.walk_length):
                probe.ref_walks.append(w)
                probe.ref_targets.append(w.target_id)
        if not probe.ref_walks:
            return probe
        for nid in val.node_ids():
            rng = rng_for(config.seed, "val-query", nid)
            walk = sample_walk(val, nid, config.walk_length, rng)
            caps = _sample_capture_indices(rng, walk.length, n_captures)
            probe.query_feats.append(query_walk_features(val, walk, features,
                                                         TRAIN_FOV, caps))
            probe.query_truth.append(nid)
        return probe

    def top1(self, params: ModelParams, features) -> float:
        if not self.ref_walks or not self.query_feats:
            return 0.0
        refs = embed_sat_walks(params, self.ref_walks, features)
        queries = embed_street_features(params, self.query_feats)
        targets = np.array(self.ref_targets)
        hits = 0
        for q, truth in zip(queries, self.query_truth):
            d2 = np.sum((refs - q) ** 2, axis=1)
            truth_mask = targets == truth
            if not truth_mask.any():
                continue
            if d2[truth_mask].min() < d2[~truth_mask].min():
                hits += 1
        return hits / len(self.query_truth)


def train(split: GraphSplit, features, config: TrainConfig) -> TrainResult:
    """Train both branches end-to-end; deterministic for a fixed seed."""
    train_graph = split.train
    train_ids = train_graph.node_ids()
    if len(train_ids) < 2:
        raise ValueError("training graph needs at least 2 nodes for triplets")
    missing = [nid for nid in train_ids if nid not in features.sat]
    if missing:
        raise ValueError(f"features missing training node {missing[0]!r}")
    if config.layer_dims[0] != features.dim:
        raise ValueError(f"layer_dims[0] = {config.layer_dims[0]} must equal "
                         f"feature dim {features.dim}")

    n_captures = features.captures if config.captures is None \
        else min(config.captures, features.captures)
    params = init_model(config.layer_dims, features.d_pano, config.seed,
                        config.aggregator)
    optimizer = AdamW(config.learning_rate, config.weight_decay)
    probe = _ValProbe.build(split, features, config, n_captures)

    log: list[EpochStats] = []
    best_top1 = -1.0
    best_epoch = 0
    best_params = copy.deepcopy(params)
    bad_epochs = 0

    for epoch in range(config.epochs):
        rng = rng_for(config.seed, "epoch", epoch)
        order = rng.permutation(len(train_ids))

        anchors, positives, negatives = [], [], []
        anchor_targets, negative_targets = [], []
        for idx in order:
            nid = train_ids[int(idx)]
            walk = sample_walk(train_graph, nid, config.walk_length, rng)
            caps = _sample_capture_indices(rng, walk.length, n_captures)
            anchors.append(query_walk_features(train_graph, walk, features,
                                               TRAIN_FOV, caps))
            positives.append(np.stack([features.sat[n] for n in walk.node_ids]))
            j = int(rng.integers(len(train_ids) - 1))
            if j >= int(idx):  # uniform over nodes other than the anchor target
                j += 1
            neg_walk = sample_walk(train_graph, train_ids[j], config.walk_length, rng)
            negatives.append(np.stack([features.sat[n] for n in neg_walk.node_ids]))
            anchor_targets.append(nid)
            negative_targets.append(neg_walk.target_id)

        loss_sum = 0.0
        for start in range(0, len(anchors), config.batch_size):
            sl = slice(start, start + config.batch_size)
            batch = WalkBatch(anchor_feats=anchors[sl], positive_feats=positives[sl],
                              negative_feats=negatives[sl],
                              anchor_targets=anchor_targets[sl],
                              negative_targets=negative_targets[sl])
            loss, grads = backward(batch, params, config.margin)
            optimizer.step(param_arrays(params), param_arrays(grads))
            loss_sum += loss * len(batch)
        epoch_loss = loss_sum / len(anchors)

        val_top1 = probe.top1(params, features)
        log.append(EpochStats(epoch=epoch, train_loss=epoch_loss,
                              val_top1=val_top1, learning_rate=optimizer.lr))

        # snapshot on ties as well (later params have seen more training);
        # the plateau counter only resets on a strict improvement
        if val_top1 >= best_top1:
            if val_top1 > best_top1 + 1e-12:
                bad_epochs = 0
            else:
                bad_epochs += 1
            best_top1 = val_top1
            best_epoch = epoch
            best_params = copy.deepcopy(params)
        else:
            bad_epochs += 1
        if bad_epochs > config.plateau_patience:
            optimizer.lr *= config.plateau_factor
            bad_epochs = 0

    return TrainResult(params=best_params, log=log, best_epoch=best_epoch,
                       final_params=params)


def training_log_csv(log: list[EpochStats]) -> str:
    lines = ["epoch,train_loss,val_top1,learning_rate"]
    for row in log:
        lines.append(f"{row.epoch},{row.train_loss!r},{row.val_top1!r},"
                     f"{row.learning_rate!r}")
    return "\n".join(lines) + "\n"
