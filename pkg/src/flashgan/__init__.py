"""Minority-node augmentation for heterogeneous graphs with a subgraph-local GAN."""

from .augment import flashgan_augment, oversample, plan_synthetic_count, reweight_weights, smote
from .dataio import SynthConfig, generate, load_graph, save_graph
from .evalsuite import ClassifierConfig, run_experiment, train_classifier
from .gan import FlashGAN, GANConfig
from .hetgraph import HeteroGraph, Schema, build_graph, default_schema, induced_subgraph, sample_one_hop
from .metrics import auc_prc, auc_roc, threshold_metrics
from .threshold import ThresholdConfig, ThresholdState
from .trainer import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "ClassifierConfig",
    "FlashGAN",
    "GANConfig",
    "HeteroGraph",
    "Schema",
    "SynthConfig",
    "ThresholdConfig",
    "ThresholdState",
    "TrainConfig",
    "auc_prc",
    "auc_roc",
    "build_graph",
    "default_schema",
    "flashgan_augment",
    "generate",
    "induced_subgraph",
    "load_graph",
    "oversample",
    "plan_synthetic_count",
    "reweight_weights",
    "run_experiment",
    "sample_one_hop",
    "save_graph",
    "smote",
    "threshold_metrics",
    "train",
    "train_classifier",
]
