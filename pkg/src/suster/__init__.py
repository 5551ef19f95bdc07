"""Sparse unstructured spatio-temporal reconstruction: library and
experiment CLI."""

from .datasets import (
    DenseDataset,
    FeatureSet,
    Observation,
    SampleWindow,
    SparseMask,
    SpeedScaler,
    SplitSpec,
    SynthConfig,
    build_features,
    load_dense_dataset,
    sparsify,
    split,
    synth_generate,
    window,
)
from .model import ModelConfig, SusterModel
from .stgnn import SpatioTemporalStack, StgnnConfig, average_aggregate, stgnn_forward
from .baselines import (
    BaselineConfig,
    NaivePredictors,
    StgcnBaseline,
    distance_adjacency,
    naive_baselines,
    random_adjacency,
)
from .training import MetricReport, TrainConfig, compute_metrics, evaluate, train

__all__ = [
    "BaselineConfig",
    "DenseDataset",
    "FeatureSet",
    "MetricReport",
    "ModelConfig",
    "NaivePredictors",
    "Observation",
    "SampleWindow",
    "SparseMask",
    "SpatioTemporalStack",
    "SpeedScaler",
    "SplitSpec",
    "StgcnBaseline",
    "StgnnConfig",
    "SusterModel",
    "SynthConfig",
    "TrainConfig",
    "average_aggregate",
    "build_features",
    "compute_metrics",
    "distance_adjacency",
    "evaluate",
    "load_dense_dataset",
    "naive_baselines",
    "random_adjacency",
    "sparsify",
    "split",
    "stgnn_forward",
    "synth_generate",
    "train",
    "window",
]

__version__ = "0.1.0"
