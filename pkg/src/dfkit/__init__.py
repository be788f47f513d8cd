"""dfkit: train, fuse, and evaluate real-vs-fake image classifiers.

The package is organized as small composable modules: ``data`` (manifests,
preprocessing, synthetic sets), ``models`` (backbones, sigmoid head,
checkpoints, profiling), ``training`` (weighted BCE + Adam), ``fusion``
(mean-of-sigmoids ensembles), ``metrics`` (ROC / AUC / EER / F1 reports),
``figures`` (PNG plots), and ``cli`` (the ``dfkit`` command).
"""

from .data import (
    DatasetManifest,
    SampleRecord,
    class_weight,
    load_manifest,
    preprocess,
    synth_dataset,
    write_manifest,
)
from .errors import ConfigError, DataError, DfkitError
from .fusion import FusedScores, ScoreSet, classify, fuse, read_scores, write_scores
from .metrics import EvalReport, RocCurve, auc, eer, evaluate, render_report, roc_curve
from .models import (
    BackboneSpec,
    ClassifierModel,
    build_model,
    count_params,
    forward,
    load_checkpoint,
    profile,
    register_backbone,
    save_checkpoint,
)
from .training import AdamState, FitResult, TrainConfig, adam_step, fit, weighted_bce

__version__ = "0.1.0"

__all__ = [
    "AdamState",
    "BackboneSpec",
    "ClassifierModel",
    "ConfigError",
    "DataError",
    "DatasetManifest",
    "DfkitError",
    "EvalReport",
    "FitResult",
    "FusedScores",
    "RocCurve",
    "SampleRecord",
    "ScoreSet",
    "TrainConfig",
    "adam_step",
    "auc",
    "build_model",
    "class_weight",
    "classify",
    "count_params",
    "eer",
    "evaluate",
    "fit",
    "forward",
    "fuse",
    "load_checkpoint",
    "load_manifest",
    "preprocess",
    "profile",
    "read_scores",
    "register_backbone",
    "render_report",
    "roc_curve",
    "save_checkpoint",
    "synth_dataset",
    "weighted_bce",
    "write_manifest",
    "write_scores",
    "__version__",
]
