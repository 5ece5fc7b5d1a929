"""ttptagger: label cyber threat reports with ATT&CK tactics and techniques.

Binary-relevance linear classification over TF-IDF bag-of-words features,
hierarchy-aware post-processing of the predictions, a feedback/retrain loop
and STIX 2.0 export. See the CLI (`ttptagger --help`) and the HTTP service
(`ttptagger serve`) for the two front doors.
"""

__version__ = "0.1.0"

from .attack_kb import (
    AssociationStats,
    Taxonomy,
    build_association_stats,
    conditional_probability,
    parse_bundle,
)
from .classifier import (
    LinearModel,
    ModelBundle,
    Prediction,
    PredictionSet,
    ResamplingPolicy,
    TrainConfig,
    load_bundle,
    predict,
    save_bundle,
    scale,
    train_bundle,
    train_label,
)
from .evaluate import MetricsReport, cross_validate, f_beta, majority_baseline, score
from .features import VectorizerModel, fit, transform
from .ingest import (
    Document,
    LabeledDocument,
    TrainingStore,
    clean_text,
    extract_html_text,
    filter_trainable_labels,
)
from .stix_export import export

__all__ = [
    "AssociationStats",
    "Document",
    "LabeledDocument",
    "LinearModel",
    "MetricsReport",
    "ModelBundle",
    "Prediction",
    "PredictionSet",
    "ResamplingPolicy",
    "Taxonomy",
    "TrainConfig",
    "TrainingStore",
    "VectorizerModel",
    "build_association_stats",
    "clean_text",
    "conditional_probability",
    "cross_validate",
    "export",
    "extract_html_text",
    "f_beta",
    "filter_trainable_labels",
    "fit",
    "load_bundle",
    "majority_baseline",
    "parse_bundle",
    "predict",
    "save_bundle",
    "scale",
    "score",
    "train_bundle",
    "train_label",
    "transform",
]
