"""Graph-structured cross-view geo-localisation at desk scale."""

from .bearing import (BearingVector, compatible, compatible_yaw,
                      filter_retrievals, quantise_bearings,
                      query_bearing_vector, reference_bearing_vectors, rotate)
from .benchmark import (BenchmarkConfig, ReportRow, ReportTable,
                        ablate_captures, ablate_walk_length, recall_at_k,
                        recall_at_percent, run_benchmark)
from .geograph import (CityGraph, GeoCoord, GraphError, GraphSplit, NodeRecord,
                       forward_azimuth, load_graph, neighbor_bearings,
                       save_graph, split_graph)
from .model import (LayerParams, ModelParams, WalkBatch, backward, embed_query,
                    embed_references, forward_branch, init_model,
                    load_checkpoint, save_checkpoint, triplet_loss)
from .retrieval import (EmbeddingIndex, RetrievalResult, build_index,
                        query_topk)
from .synth import (AngularFeature, FeatureSet, fov_window, generate_city,
                    generate_features, load_features, save_features)
from .training import TrainConfig, TrainResult, train
from .walks import Walk, count_walks, enumerate_walks, sample_walk

__version__ = "0.1.0"

__all__ = [
    "AngularFeature", "BearingVector", "BenchmarkConfig", "CityGraph",
    "EmbeddingIndex", "FeatureSet", "GeoCoord", "GraphError", "GraphSplit",
    "LayerParams", "ModelParams", "NodeRecord", "ReportRow", "ReportTable",
    "RetrievalResult", "TrainConfig", "TrainResult", "Walk", "WalkBatch",
    "ablate_captures", "ablate_walk_length", "backward", "build_index",
    "compatible", "compatible_yaw", "count_walks", "embed_query",
    "embed_references", "enumerate_walks", "filter_retrievals",
    "forward_azimuth", "forward_branch", "fov_window", "generate_city",
    "generate_features", "init_model", "load_checkpoint", "load_features",
    "load_graph", "neighbor_bearings", "quantise_bearings",
    "query_bearing_vector", "query_topk", "recall_at_k", "recall_at_percent",
    "reference_bearing_vectors", "rotate", "run_benchmark", "sample_walk",
    "save_checkpoint", "save_features", "save_graph", "split_graph", "train",
    "triplet_loss",
]
