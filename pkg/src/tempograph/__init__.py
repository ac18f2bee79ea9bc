"""Temporal relation extraction as graph parsing with biaffine scorers."""

from .corpus import Document, Event, RawInput, TLink, generate_synthetic, load_corpus, load_raw
from .decode import TemporalGraph, decode
from .estimator import TemporalRelationExtractor
from .metrics import EvalReport, evaluate
from .model import BiaffineScorer, ModelConfig, ScoreSet, Vocabulary
from .schema import MATRES, TBDENSE, DatasetProfile, RelationLabel, profile

__version__ = "0.1.0"

__all__ = [
    "BiaffineScorer",
    "DatasetProfile",
    "Document",
    "EvalReport",
    "Event",
    "MATRES",
    "ModelConfig",
    "RawInput",
    "RelationLabel",
    "ScoreSet",
    "TBDENSE",
    "TLink",
    "TemporalGraph",
    "TemporalRelationExtractor",
    "Vocabulary",
    "decode",
    "evaluate",
    "generate_synthetic",
    "load_corpus",
    "load_raw",
    "profile",
]
