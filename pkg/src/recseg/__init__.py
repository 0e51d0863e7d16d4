"""Recursive semi-supervised segmentation with human-in-the-loop selection."""

from .config import ExperimentConfig
from .datamodel import (
    ClassTaxonomy,
    DatasetManifest,
    SampleRecord,
    balance_single_class,
    decode_one_hot,
    encode_one_hot,
    load_manifest,
    save_manifest,
)
from .estimator import SelfTrainingSegmenter
from .fhseg import FHConfig, SuperpixelMap, component_stats, fh_segment
from .losses import LossConfig, combined_loss, cross_entropy, dice_loss
from .metrics import MetricResult, aggregate, binary_metrics, emit_report
from .recursion import RecursionController, RecursionState, StopRule
from .segnet import ModelBackend, TrainConfig, TrainSample, UNetBackend, predict_mask, train
from .weaklabel import GateConfig, RefinePolicy, WeakLabelCandidate, auto_gate, make_candidate, refine

__version__ = "0.1.0"

__all__ = [
    "ClassTaxonomy",
    "DatasetManifest",
    "ExperimentConfig",
    "FHConfig",
    "GateConfig",
    "LossConfig",
    "MetricResult",
    "ModelBackend",
    "RecursionController",
    "RecursionState",
    "RefinePolicy",
    "SampleRecord",
    "SelfTrainingSegmenter",
    "StopRule",
    "SuperpixelMap",
    "TrainConfig",
    "TrainSample",
    "UNetBackend",
    "WeakLabelCandidate",
    "aggregate",
    "auto_gate",
    "balance_single_class",
    "binary_metrics",
    "combined_loss",
    "component_stats",
    "cross_entropy",
    "decode_one_hot",
    "dice_loss",
    "emit_report",
    "encode_one_hot",
    "fh_segment",
    "load_manifest",
    "make_candidate",
    "predict_mask",
    "refine",
    "save_manifest",
    "train",
]
