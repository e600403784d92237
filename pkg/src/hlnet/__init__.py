"""Weakly supervised audio-visual temporal event detection.

Offline detection runs a three-branch relation network over whole videos;
online detection streams through a causal approximator distilled from it.
"""

from .autodiff import Mat, Tape
from .data import CorpusSpec, FeatureSequence, VideoRecord, generate_corpus, load_manifest, save_corpus
from .evaluate import CurveReport, average_precision, evaluate_head, roc_auc
from .model import Activations, HLNetParams, ModelConfig, OnlineScorer
from .relation import RelationConfig, RelationMatrix
from .train import LossReport, TrainConfig, fit

__version__ = "0.1.0"

__all__ = [
    "Activations",
    "CorpusSpec",
    "CurveReport",
    "FeatureSequence",
    "HLNetParams",
    "LossReport",
    "Mat",
    "ModelConfig",
    "OnlineScorer",
    "RelationConfig",
    "RelationMatrix",
    "Tape",
    "TrainConfig",
    "VideoRecord",
    "average_precision",
    "evaluate_head",
    "fit",
    "generate_corpus",
    "load_manifest",
    "roc_auc",
    "save_corpus",
    "__version__",
]
