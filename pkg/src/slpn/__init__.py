"""Evidential sequence labeling with flow-based token evidence and
attention-transmitted uncertainty."""

from .data import Entity, Sentence, decode_bioes, encode_bioes, parse_conll, write_conll
from .estimator import SLPNTagger
from .evidence import (
    MEASURES,
    UncertaintyReport,
    dirichlet_entropy,
    dissonance,
    entropy_uncertainty,
    epistemic,
    expected_cross_entropy,
    expected_probability,
    aleatoric,
    evidence_to_alpha,
    evidence_to_probability,
    uncertainty_report,
    vacuity,
)
from .evaluation import (
    DetectionResult,
    EntityPartition,
    aupr,
    auroc,
    build_report,
    ner_f1,
    ood_eval,
    partition_entities,
    weighted_score,
    ws_eval,
)
from .training import (
    ModelState,
    TrainingConfig,
    gradient_check,
    load_checkpoint,
    mc_dropout_predict,
    predict,
    predict_batch,
    save_checkpoint,
    slpn_loss,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "Entity",
    "Sentence",
    "decode_bioes",
    "encode_bioes",
    "parse_conll",
    "write_conll",
    "SLPNTagger",
    "MEASURES",
    "UncertaintyReport",
    "dirichlet_entropy",
    "dissonance",
    "entropy_uncertainty",
    "epistemic",
    "expected_cross_entropy",
    "expected_probability",
    "aleatoric",
    "evidence_to_alpha",
    "evidence_to_probability",
    "uncertainty_report",
    "vacuity",
    "DetectionResult",
    "EntityPartition",
    "aupr",
    "auroc",
    "build_report",
    "ner_f1",
    "ood_eval",
    "partition_entities",
    "weighted_score",
    "ws_eval",
    "ModelState",
    "TrainingConfig",
    "gradient_check",
    "load_checkpoint",
    "mc_dropout_predict",
    "predict",
    "predict_batch",
    "save_checkpoint",
    "slpn_loss",
    "train",
    "__version__",
]
