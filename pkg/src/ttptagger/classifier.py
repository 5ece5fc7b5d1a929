"""Per-label linear max-margin classifiers over the selected text features.

One independent binary classifier per tactic and per technique. Training
minimizes the L2-regularized hinge loss

    0.5 * ||w||^2  +  C * sum_i max(0, 1 - y_i * (w . x_i + b))

by dual coordinate descent with the intercept folded in as a regularized
constant feature. Decision scores are mapped to [0, 1] confidences by
min-max scaling anchored at -1 and +1.
"""

from __future__ import annotations

import base64
import hashlib
import json
import logging
import os
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
from scipy import sparse

from . import features
from .attack_kb import TacticDef, TechniqueDef, Taxonomy
from .features import TFIDF, VectorizerModel
from .ingest import Document, TrainingStore, clean_text, filter_trainable_labels, load_stopwords, now_iso

logger = logging.getLogger(__name__)

BUNDLE_FORMAT = 1

AUTO = "auto"
STRATEGY_NONE = "none"
TACTICS_AS_FEATURES = "tactics-as-features"


class TrainingError(ValueError):
    """The store/config cannot produce a usable model bundle."""


class DegenerateLabelError(ValueError):
    """A label has only one class in its training data."""


@dataclass(frozen=True)
class LinearModel:
    label_id: str
    weights: np.ndarray
    bias: float
    trained_on: int


@dataclass(frozen=True)
class Prediction:
    label_id: str
    raw_score: float
    confidence: float
    decided: bool


@dataclass(frozen=True)
class PredictionSet:
    doc_id: str
    tactics: tuple[Prediction, ...]
    techniques: tuple[Prediction, ...]


@dataclass(frozen=True)
class ResamplingPolicy:
    enabled: bool = False
    tactic_pos: int = 400
    tactic_neg: int = 400
    technique_pos: int = 125
    technique_neg: int = 500


@dataclass
class TrainConfig:
    """Hyper-parameters for the whole train/evaluate pipeline."""

    mode: str = TFIDF
    min_df: int = 2
    max_df: float = 0.90
    reg_tactics: float = 1.0
    reg_techniques: float = 1.0
    min_reports: int = 5
    folds: int = 5
    seed: int = 0
    resampling: ResamplingPolicy = field(default_factory=ResamplingPolicy)
    postprocess: str = AUTO
    # hanging-node thresholds (classification threshold plus the four bands)
    hn_th: float = 0.5
    hn_a: float = 0.55
    hn_b: float = 0.05
    hn_c: float = 0.95
    hn_d: float = 0.30
    steiner_k: int = 15
    knapsack_capacity: int = 3
    knapsack_penalty: float = 0.1
    rare_rules_variance_cutoff: float = 0.05

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "resampling"}
        d["resampling"] = {
            "enabled": self.resampling.enabled,
            "tactic_pos": self.resampling.tactic_pos,
            "tactic_neg": self.resampling.tactic_neg,
            "technique_pos": self.resampling.technique_pos,
            "technique_neg": self.resampling.technique_neg,
        }
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        data = dict(data)
        res = data.pop("resampling", {})
        known = {f.name for f in fields(cls)}
        cfg = cls(**{k: v for k, v in data.items() if k in known and k != "resampling"})
        if res:
            cfg.resampling = ResamplingPolicy(**res)
        return cfg


def scale(raw_score: float) -> float:
    """Min-max scaling of a decision score anchored at [-1, 1], clamped to [0, 1]."""
    return min(max((raw_score + 1.0) / 2.0, 0.0), 1.0)


def _label_seed(base_seed: int, label_id: str) -> list[int]:
    digest = hashlib.sha256(label_id.encode("utf-8")).digest()
    return [base_seed & 0x7FFFFFFF, int.from_bytes(digest[:4], "big")]


def train_label(
    X: sparse.csr_matrix,
    y: np.ndarray,
    reg_strength: float = 1.0,
    label_id: str = "",
    seed: int = 0,
    max_epochs: int = 1000,
    tol: float = 1e-6,
) -> LinearModel:
    """Fit one binary hinge-loss classifier by dual coordinate descent.

    Deterministic for a fixed seed: coordinates are visited in a seeded
    permutation each epoch. Stops when the relative change of the primal
    objective drops below `tol` or after `max_epochs` passes.
    """
    if reg_strength <= 0:
        raise ValueError("reg_strength must be positive")
    y = np.asarray(y, dtype=bool)
    n, d = X.shape
    n_pos = int(y.sum())
    if n_pos == 0 or n_pos == n:
        raise DegenerateLabelError(f"label {label_id or '?'} has a single class")

    ybin = np.where(y, 1.0, -1.0)
    indptr, indices, data = X.indptr, X.indices, X.data
    # +1.0 on the diagonal accounts for the implicit constant bias feature
    qdiag = np.asarray(X.multiply(X).sum(axis=1)).ravel() + 1.0
    w = np.zeros(d + 1)
    alpha = np.zeros(n)
    C = float(reg_strength)
    rng = np.random.default_rng(_label_seed(seed, label_id))

    prev_obj = np.inf
    for _ in range(max_epochs):
        for i in rng.permutation(n):
            lo, hi = indptr[i], indptr[i + 1]
            idx = indices[lo:hi]
            vals = data[lo:hi]
            g = ybin[i] * (w[idx] @ vals + w[d]) - 1.0
            a_new = min(max(alpha[i] - g / qdiag[i], 0.0), C)
            if a_new != alpha[i]:
                step = (a_new - alpha[i]) * ybin[i]
                w[idx] += step * vals
                w[d] += step
                alpha[i] = a_new
        scores = X @ w[:d] + w[d]
        obj = 0.5 * (w @ w) + C * np.maximum(0.0, 1.0 - ybin * scores).sum()
        if abs(prev_obj - obj) < tol * max(abs(prev_obj), 1.0):
            break
        prev_obj = obj

    return LinearModel(label_id=label_id, weights=w[:d].copy(), bias=float(w[d]), trained_on=n)


def hinge_objective(model: LinearModel, X: sparse.csr_matrix, y: np.ndarray, reg_strength: float) -> float:
    """Primal objective of a fitted model on (X, y); used by invariance checks."""
    ybin = np.where(np.asarray(y, dtype=bool), 1.0, -1.0)
    scores = X @ model.weights + model.bias
    hinge = np.maximum(0.0, 1.0 - ybin * scores).sum()
    return 0.5 * (model.weights @ model.weights + model.bias**2) + reg_strength * hinge


def resample_indices(
    y: np.ndarray, n_pos: int, n_neg: int, rng: np.random.Generator
) -> np.ndarray:
    """Over/undersample with replacement to exactly (n_pos, n_neg) rows."""
    y = np.asarray(y, dtype=bool)
    pos = np.flatnonzero(y)
    neg = np.flatnonzero(~y)
    if pos.size == 0:
        raise DegenerateLabelError("no positive examples to resample")
    if neg.size == 0:
        raise DegenerateLabelError("no negative examples to resample")
    return np.concatenate([
        rng.choice(pos, size=n_pos, replace=True),
        rng.choice(neg, size=n_neg, replace=True),
    ])


def decision_scores(models: list[LinearModel | None], X: sparse.csr_matrix) -> np.ndarray:
    """Decision-function values, shape (n_docs, n_labels); -1 for absent models."""
    n = X.shape[0]
    out = np.full((n, len(models)), -1.0)
    present = [(k, m) for k, m in enumerate(models) if m is not None]
    if present:
        W = np.stack([m.weights for _, m in present])
        b = np.array([m.bias for _, m in present])
        scored = X @ W.T + b
        for col, (k, _) in enumerate(present):
            out[:, k] = scored[:, col]
    return out


def predictions_from_scores(labels: list[str], raw: np.ndarray) -> tuple[Prediction, ...]:
    preds = []
    for label, score in zip(labels, raw):
        conf = scale(float(score))
        preds.append(Prediction(label_id=label, raw_score=float(score), confidence=conf, decided=conf >= 0.5))
    return tuple(preds)


@dataclass
class ModelBundle:
    """Everything needed to score a report and post-process the result."""

    vectorizer: VectorizerModel
    taxonomy: Taxonomy
    tactic_labels: list[str]
    technique_labels: list[str]
    tactic_models: dict[str, LinearModel]
    technique_models: dict[str, LinearModel]
    postprocessing: dict          # {"strategy": str, "config": dict}
    taxonomy_version: str
    trained_at: str
    cv_scores: dict | None
    config: TrainConfig
    artifacts: dict               # boosts / rules / branching / association stats
    skipped_labels: list[str] = field(default_factory=list)

    @property
    def strategy(self) -> str:
        return self.postprocessing.get("strategy", STRATEGY_NONE)

    def model_version(self) -> str:
        return self.trained_at


_STOPWORDS: frozenset[str] | None = None


def _stopwords() -> frozenset[str]:
    global _STOPWORDS
    if _STOPWORDS is None:
        _STOPWORDS = load_stopwords()
    return _STOPWORDS


def score_documents(
    vectorizer: VectorizerModel,
    tactic_labels: list[str],
    tactic_models: dict[str, LinearModel],
    technique_labels: list[str],
    technique_models: dict[str, LinearModel],
    docs_tokens: list[list[str]],
    doc_ids: list[str],
    augment_techniques: bool,
) -> list[PredictionSet]:
    """Score many documents at once; shared by predict and cross-validation.

    When `augment_techniques` is set the technique models expect the tactic
    confidences appended after the text features, in tactic-label order.
    """
    X = features.transform_matrix(vectorizer, docs_tokens)
    tac_raw = decision_scores([tactic_models.get(t) for t in tactic_labels], X)
    if augment_techniques and technique_labels:
        conf = np.clip((tac_raw + 1.0) / 2.0, 0.0, 1.0)
        X_tech = sparse.hstack([X, sparse.csr_matrix(conf)], format="csr")
    else:
        X_tech = X
    tech_raw = decision_scores([technique_models.get(t) for t in technique_labels], X_tech)

    out = []
    for row, doc_id in enumerate(doc_ids):
        out.append(
            PredictionSet(
                doc_id=doc_id,
                tactics=predictions_from_scores(tactic_labels, tac_raw[row]),
                techniques=predictions_from_scores(technique_labels, tech_raw[row]),
            )
        )
    return out


def predict(bundle: ModelBundle, doc: Document) -> PredictionSet:
    """Score one document against every trainable label.

    Pure function of (bundle, doc.text): cleaning is idempotent, so both raw
    and already-cleaned text are accepted.
    """
    tokens = clean_text(doc.text, _stopwords())
    return score_documents(
        bundle.vectorizer,
        bundle.tactic_labels,
        bundle.tactic_models,
        bundle.technique_labels,
        bundle.technique_models,
        [tokens],
        [doc.doc_id],
        augment_techniques=bundle.strategy == TACTICS_AS_FEATURES,
    )[0]


def _train_family(
    X: sparse.csr_matrix,
    entries,
    labels: list[str],
    label_getter,
    reg: float,
    policy_counts: tuple[int, int] | None,
    seed: int,
) -> tuple[dict[str, LinearModel], list[str]]:
    models: dict[str, LinearModel] = {}
    skipped: list[str] = []
    for label in labels:
        y = np.array([label in label_getter(e) for e in entries], dtype=bool)
        try:
            if policy_counts is not None:
                rng = np.random.default_rng(_label_seed(seed, "resample:" + label))
                idx = resample_indices(y, policy_counts[0], policy_counts[1], rng)
                models[label] = train_label(X[idx], y[idx], reg, label_id=label, seed=seed)
            else:
                models[label] = train_label(X, y, reg, label_id=label, seed=seed)
        except DegenerateLabelError:
            logger.warning("label %s is single-class in the training data; skipped", label)
            skipped.append(label)
    return models, skipped


def train_bundle(
    store: TrainingStore,
    taxonomy: Taxonomy,
    config: TrainConfig | None = None,
    stats=None,
) -> ModelBundle:
    """Fit the vectorizer and all per-label models, pick the post-processing
    strategy (automatically unless pinned in the config) and record
    cross-validated scores."""
    from . import evaluate, postprocess   # deferred: those modules build on this one

    config = config or TrainConfig()
    if len(store) == 0:
        raise TrainingError("training store is empty")

    stopwords = _stopwords()
    entries = list(store.entries)
    docs_tokens = [clean_text(e.document.text, stopwords) for e in entries]
    tactic_labels, technique_labels = filter_trainable_labels(store, config.min_reports)
    # model label ids must stay within the taxonomy, whatever the store holds
    known_tactics = {t.id for t in taxonomy.tactics}
    alien = [t for t in tactic_labels if t not in known_tactics]
    alien += [t for t in technique_labels if t not in taxonomy.membership]
    if alien:
        logger.warning("store labels outside the taxonomy are ignored: %s", ", ".join(alien))
    tactic_labels = [t for t in tactic_labels if t in known_tactics]
    technique_labels = [t for t in technique_labels if t in taxonomy.membership]
    if not tactic_labels and not technique_labels:
        raise TrainingError("no trainable labels in the store")

    vectorizer = features.fit(docs_tokens, config.mode, config.min_df, config.max_df)
    X = features.transform_matrix(vectorizer, docs_tokens)

    pol = config.resampling
    tactic_counts = (pol.tactic_pos, pol.tactic_neg) if pol.enabled else None
    technique_counts = (pol.technique_pos, pol.technique_neg) if pol.enabled else None

    tactic_models, skipped_t = _train_family(
        X, entries, tactic_labels, lambda e: e.tactic_labels,
        config.reg_tactics, tactic_counts, config.seed,
    )

    cv_multi = None
    if config.postprocess == AUTO:
        strategy, strategy_config, cv_multi = postprocess.auto_select(
            store, taxonomy, config, stats=stats
        )
    else:
        strategy = config.postprocess
        strategy_config = postprocess.strategy_config(strategy, config)

    if strategy == TACTICS_AS_FEATURES and technique_labels:
        tac_raw = decision_scores([tactic_models.get(t) for t in tactic_labels], X)
        conf = np.clip((tac_raw + 1.0) / 2.0, 0.0, 1.0)
        X_tech = sparse.hstack([X, sparse.csr_matrix(conf)], format="csr")
    else:
        X_tech = X

    technique_models, skipped_te = _train_family(
        X_tech, entries, technique_labels, lambda e: e.technique_labels,
        config.reg_techniques, technique_counts, config.seed,
    )

    if not tactic_models and not technique_models:
        raise TrainingError("all labels are degenerate; nothing was trained")

    artifacts = postprocess.build_artifacts(entries, taxonomy, config, stats=stats)

    pinned = TrainConfig.from_dict(config.to_dict())
    pinned.postprocess = strategy
    if cv_multi is not None and strategy in cv_multi:
        cv_scores = evaluate.cv_scores_dict(cv_multi[strategy])
    else:
        try:
            result = evaluate.cross_validate(store, taxonomy, pinned, strategy, stats=stats)
            cv_scores = evaluate.cv_scores_dict(result)
        except ValueError as exc:
            logger.warning("cross-validation skipped: %s", exc)
            cv_scores = None

    return ModelBundle(
        vectorizer=vectorizer,
        taxonomy=taxonomy,
        tactic_labels=tactic_labels,
        technique_labels=technique_labels,
        tactic_models=tactic_models,
        technique_models=technique_models,
        postprocessing={"strategy": strategy, "config": strategy_config},
        taxonomy_version=taxonomy.version,
        trained_at=now_iso(),
        cv_scores=cv_scores,
        config=config,
        artifacts=artifacts,
        skipped_labels=skipped_t + skipped_te,
    )


# --- bundle (de)serialization -------------------------------------------------

def _encode_floats(a: np.ndarray) -> str:
    return base64.b64encode(np.asarray(a, dtype="<f8").tobytes()).decode("ascii")


def _decode_floats(s: str) -> np.ndarray:
    return np.frombuffer(base64.b64decode(s), dtype="<f8").copy()


def _model_to_dict(m: LinearModel) -> dict:
    return {
        "label_id": m.label_id,
        "weights": _encode_floats(m.weights),
        "bias": m.bias,
        "trained_on": m.trained_on,
    }


def _model_from_dict(d: dict) -> LinearModel:
    return LinearModel(
        label_id=d["label_id"],
        weights=_decode_floats(d["weights"]),
        bias=float(d["bias"]),
        trained_on=int(d["trained_on"]),
    )


def _taxonomy_to_dict(tax: Taxonomy) -> dict:
    return {
        "version": tax.version,
        "tactics": [
            {"id": t.id, "name": t.name, "stix_id": t.stix_id, "shortname": t.shortname}
            for t in tax.tactics
        ],
        "techniques": [
            {"id": t.id, "name": t.name, "stix_id": t.stix_id, "tactic_ids": sorted(t.tactic_ids)}
            for t in tax.techniques
        ],
        "stix_index": dict(sorted(tax.stix_index.items())),
    }


def _taxonomy_from_dict(d: dict) -> Taxonomy:
    tactics = tuple(
        TacticDef(id=t["id"], name=t["name"], stix_id=t["stix_id"], shortname=t.get("shortname", ""))
        for t in d["tactics"]
    )
    techniques = tuple(
        TechniqueDef(
            id=t["id"], name=t["name"], stix_id=t["stix_id"], tactic_ids=frozenset(t["tactic_ids"])
        )
        for t in d["techniques"]
    )
    return Taxonomy(
        tactics=tactics,
        techniques=techniques,
        membership={t.id: t.tactic_ids for t in techniques},
        stix_index=d.get("stix_index", {}),
        version=d.get("version", "unknown"),
    )


def save_bundle(bundle: ModelBundle, path: str | os.PathLike) -> None:
    """Write the bundle as one versioned JSON file (weights base64-embedded).

    Writes to a temp file in the same directory and renames it into place, so
    readers never observe a torn file.
    """
    payload = {
        "format": BUNDLE_FORMAT,
        "trained_at": bundle.trained_at,
        "taxonomy_version": bundle.taxonomy_version,
        "vectorizer": bundle.vectorizer.to_dict(),
        "taxonomy": _taxonomy_to_dict(bundle.taxonomy),
        "tactic_labels": bundle.tactic_labels,
        "technique_labels": bundle.technique_labels,
        "tactic_models": [_model_to_dict(bundle.tactic_models[t]) for t in bundle.tactic_labels if t in bundle.tactic_models],
        "technique_models": [_model_to_dict(bundle.technique_models[t]) for t in bundle.technique_labels if t in bundle.technique_models],
        "postprocessing": bundle.postprocessing,
        "cv_scores": bundle.cv_scores,
        "config": bundle.config.to_dict(),
        "artifacts": bundle.artifacts,
        "skipped_labels": bundle.skipped_labels,
    }
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


def load_bundle(path: str | os.PathLike) -> ModelBundle:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format") != BUNDLE_FORMAT:
        raise ValueError(f"unsupported bundle format {payload.get('format')!r}")
    return ModelBundle(
        vectorizer=VectorizerModel.from_dict(payload["vectorizer"]),
        taxonomy=_taxonomy_from_dict(payload["taxonomy"]),
        tactic_labels=payload["tactic_labels"],
        technique_labels=payload["technique_labels"],
        tactic_models={m["label_id"]: _model_from_dict(m) for m in payload["tactic_models"]},
        technique_models={m["label_id"]: _model_from_dict(m) for m in payload["technique_models"]},
        postprocessing=payload["postprocessing"],
        taxonomy_version=payload["taxonomy_version"],
        trained_at=payload["trained_at"],
        cv_scores=payload.get("cv_scores"),
        config=TrainConfig.from_dict(payload.get("config", {})),
        artifacts=payload.get("artifacts", {}),
        skipped_labels=payload.get("skipped_labels", []),
    )
