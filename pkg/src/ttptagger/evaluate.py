"""Metrics, k-fold cross-validation, the majority baseline and strategy
comparison tables.

Precision/recall/F0.5 are reported micro-averaged (counts pooled over labels)
and macro-averaged (unweighted mean of per-label metrics, 0/0 cells scored 0).
Cross-validation pools per-label counts across folds; per-fold values are kept
so comparison tables can show the spread across folds.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, fields

import numpy as np
from scipy import sparse

from . import features, postprocess
from .attack_kb import AssociationStats, Taxonomy
from .classifier import (
    PredictionSet,
    TrainConfig,
    _train_family,
    decision_scores,
    predictions_from_scores,
    _stopwords,
)
from .ingest import TrainingStore, clean_text, filter_trainable_labels

METRIC_NAMES = ("micro_p", "micro_r", "micro_f05", "macro_p", "macro_r", "macro_f05")


@dataclass(frozen=True)
class MetricCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def __add__(self, other: "MetricCounts") -> "MetricCounts":
        return MetricCounts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0


@dataclass(frozen=True)
class MetricsReport:
    micro_precision: float
    micro_recall: float
    micro_f05: float
    macro_precision: float
    macro_recall: float
    macro_f05: float

    def as_tuple(self) -> tuple[float, ...]:
        return (
            self.micro_precision, self.micro_recall, self.micro_f05,
            self.macro_precision, self.macro_recall, self.macro_f05,
        )

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class CVScores:
    tactics: MetricsReport
    techniques: MetricsReport
    tactic_folds: list[MetricsReport]
    technique_folds: list[MetricsReport]


def f_beta(precision: float, recall: float, beta: float = 0.5) -> float:
    """Weighted harmonic mean of precision and recall; beta < 1 favors precision."""
    denom = beta * beta * precision + recall
    if denom == 0:
        return 0.0
    return (1.0 + beta * beta) * precision * recall / denom


def label_counts(
    gold: dict[str, set[str]], pred: dict[str, set[str]], labels: list[str]
) -> dict[str, MetricCounts]:
    """Per-label TP/FP/FN over a document collection.

    Gold labels outside `labels` are ignored (untrainable ground truth);
    predicted labels outside `labels` are an error.
    """
    if set(gold) != set(pred):
        raise ValueError("gold and pred must cover the same doc ids")
    label_set = set(labels)
    counts = {lbl: MetricCounts() for lbl in labels}
    for doc_id, pred_set in pred.items():
        stray = pred_set - label_set
        if stray:
            raise ValueError(f"predicted labels outside the label list: {sorted(stray)}")
        gold_set = gold[doc_id] & label_set
        for lbl in pred_set | gold_set:
            c = counts[lbl]
            if lbl in pred_set and lbl in gold_set:
                counts[lbl] = c + MetricCounts(tp=1)
            elif lbl in pred_set:
                counts[lbl] = c + MetricCounts(fp=1)
            else:
                counts[lbl] = c + MetricCounts(fn=1)
    return counts


def report_from_counts(counts: dict[str, MetricCounts]) -> MetricsReport:
    pooled = MetricCounts()
    for c in counts.values():
        pooled = pooled + c
    per_label = [(c.precision, c.recall) for c in counts.values()]
    n = len(per_label) or 1
    macro_p = sum(p for p, _ in per_label) / n
    macro_r = sum(r for _, r in per_label) / n
    macro_f = sum(f_beta(p, r) for p, r in per_label) / n
    return MetricsReport(
        micro_precision=pooled.precision,
        micro_recall=pooled.recall,
        micro_f05=f_beta(pooled.precision, pooled.recall),
        macro_precision=macro_p,
        macro_recall=macro_r,
        macro_f05=macro_f,
    )


def score(gold: dict[str, set[str]], pred: dict[str, set[str]], labels: list[str]) -> MetricsReport:
    """Micro and macro precision/recall/F0.5 of predicted label sets."""
    return report_from_counts(label_counts(gold, pred, labels))


def majority_baseline(train_sets: list[set[str]], test_size: int) -> list[set[str]]:
    """Predict the most frequent training label for every test instance.

    Ties go to the lexicographically smallest id; a training set with no
    labels at all yields empty predictions.
    """
    if not train_sets:
        raise ValueError("training set is empty")
    freq: dict[str, int] = {}
    for labels in train_sets:
        for lbl in labels:
            freq[lbl] = freq.get(lbl, 0) + 1
    if not freq:
        return [set() for _ in range(test_size)]
    winner = min(freq, key=lambda lbl: (-freq[lbl], lbl))
    return [{winner} for _ in range(test_size)]


# --- cross-validation -----------------------------------------------------------

@dataclass
class _FoldRaw:
    gold_tactics: dict[str, set[str]]
    gold_techniques: dict[str, set[str]]
    raw: list[PredictionSet]
    raw_augmented: list[PredictionSet] | None
    ctx: postprocess.PostprocessContext


def _fold_partition(n: int, folds: int, seed: int) -> list[np.ndarray]:
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(part) for part in np.array_split(perm, folds)]


def _augmented(X: sparse.csr_matrix, tac_raw: np.ndarray) -> sparse.csr_matrix:
    conf = np.clip((tac_raw + 1.0) / 2.0, 0.0, 1.0)
    return sparse.hstack([X, sparse.csr_matrix(conf)], format="csr")


def _run_folds(
    store: TrainingStore,
    taxonomy: Taxonomy,
    config: TrainConfig,
    stats: AssociationStats | None,
    need_augmented: bool,
) -> tuple[list[_FoldRaw], list[str], list[str]]:
    entries = list(store.entries)
    if len(entries) < config.folds:
        raise ValueError(
            f"need at least {config.folds} documents for {config.folds}-fold cross-validation"
        )
    stopwords = _stopwords()
    tokens = [clean_text(e.document.text, stopwords) for e in entries]
    tactic_labels, technique_labels = filter_trainable_labels(store, config.min_reports)
    known_tactics = {t.id for t in taxonomy.tactics}
    tactic_labels = [t for t in tactic_labels if t in known_tactics]
    technique_labels = [t for t in technique_labels if t in taxonomy.membership]

    pol = config.resampling
    tactic_counts = (pol.tactic_pos, pol.tactic_neg) if pol.enabled else None
    technique_counts = (pol.technique_pos, pol.technique_neg) if pol.enabled else None

    rules = branching = None
    if stats is not None:
        rules = postprocess.build_rare_rules(stats, config.rare_rules_variance_cutoff)
        branching = postprocess.build_branching(stats)

    out: list[_FoldRaw] = []
    for test_idx in _fold_partition(len(entries), config.folds, config.seed):
        test_set = set(int(i) for i in test_idx)
        train_entries = [e for k, e in enumerate(entries) if k not in test_set]
        train_tokens = [tokens[k] for k in range(len(entries)) if k not in test_set]
        test_entries = [entries[int(k)] for k in test_idx]
        test_tokens = [tokens[int(k)] for k in test_idx]

        vec = features.fit(train_tokens, config.mode, config.min_df, config.max_df)
        X_train = features.transform_matrix(vec, train_tokens)
        X_test = features.transform_matrix(vec, test_tokens)

        tac_models, _ = _train_family(
            X_train, train_entries, tactic_labels, lambda e: e.tactic_labels,
            config.reg_tactics, tactic_counts, config.seed,
        )
        tec_models, _ = _train_family(
            X_train, train_entries, technique_labels, lambda e: e.technique_labels,
            config.reg_techniques, technique_counts, config.seed,
        )

        tac_raw_test = decision_scores([tac_models.get(t) for t in tactic_labels], X_test)
        tec_raw_test = decision_scores([tec_models.get(t) for t in technique_labels], X_test)

        raw_aug = None
        if need_augmented and technique_labels:
            tac_raw_train = decision_scores([tac_models.get(t) for t in tactic_labels], X_train)
            tec_models_aug, _ = _train_family(
                _augmented(X_train, tac_raw_train), train_entries, technique_labels,
                lambda e: e.technique_labels, config.reg_techniques, technique_counts, config.seed,
            )
            tec_raw_aug = decision_scores(
                [tec_models_aug.get(t) for t in technique_labels],
                _augmented(X_test, tac_raw_test),
            )
            raw_aug = [
                PredictionSet(
                    doc_id=e.document.doc_id,
                    tactics=predictions_from_scores(tactic_labels, tac_raw_test[row]),
                    techniques=predictions_from_scores(technique_labels, tec_raw_aug[row]),
                )
                for row, e in enumerate(test_entries)
            ]

        raw = [
            PredictionSet(
                doc_id=e.document.doc_id,
                tactics=predictions_from_scores(tactic_labels, tac_raw_test[row]),
                techniques=predictions_from_scores(technique_labels, tec_raw_test[row]),
            )
            for row, e in enumerate(test_entries)
        ]

        ctx = postprocess.PostprocessContext(
            taxonomy=taxonomy,
            hanging=postprocess.HangingNodeConfig(
                th=config.hn_th, a=config.hn_a, b=config.hn_b, c=config.hn_c, d=config.hn_d
            ),
            boosts=postprocess.build_boost_matrix(train_entries, taxonomy),
            rules=rules,
            branching=branching,
            stats=stats,
            steiner=postprocess.SteinerConfig(k=config.steiner_k),
            knapsack_capacity=config.knapsack_capacity,
            knapsack_penalty=config.knapsack_penalty,
        )
        out.append(
            _FoldRaw(
                gold_tactics={e.document.doc_id: set(e.tactic_labels) for e in test_entries},
                gold_techniques={e.document.doc_id: set(e.technique_labels) for e in test_entries},
                raw=raw,
                raw_augmented=raw_aug,
                ctx=ctx,
            )
        )
    return out, tactic_labels, technique_labels


def _score_strategy(
    folds: list[_FoldRaw], strategy: str, tactic_labels: list[str], technique_labels: list[str]
) -> CVScores:
    pooled_tac: dict[str, MetricCounts] = {lbl: MetricCounts() for lbl in tactic_labels}
    pooled_tec: dict[str, MetricCounts] = {lbl: MetricCounts() for lbl in technique_labels}
    tac_folds: list[MetricsReport] = []
    tec_folds: list[MetricsReport] = []
    for fold in folds:
        preds = fold.raw_augmented if strategy == postprocess.TACTICS_AS_FEATURES and fold.raw_augmented else fold.raw
        decided_tac: dict[str, set[str]] = {}
        decided_tec: dict[str, set[str]] = {}
        for p in preds:
            post = postprocess.apply_strategy(p, strategy, fold.ctx)
            decided_tac[p.doc_id] = {t.label_id for t in post.tactics if t.decided}
            decided_tec[p.doc_id] = {t.label_id for t in post.techniques if t.decided}
        fold_tac = label_counts(fold.gold_tactics, decided_tac, tactic_labels)
        fold_tec = label_counts(fold.gold_techniques, decided_tec, technique_labels)
        tac_folds.append(report_from_counts(fold_tac))
        tec_folds.append(report_from_counts(fold_tec))
        for lbl, c in fold_tac.items():
            pooled_tac[lbl] = pooled_tac[lbl] + c
        for lbl, c in fold_tec.items():
            pooled_tec[lbl] = pooled_tec[lbl] + c
    return CVScores(
        tactics=report_from_counts(pooled_tac),
        techniques=report_from_counts(pooled_tec),
        tactic_folds=tac_folds,
        technique_folds=tec_folds,
    )


def cross_validate_multi(
    store: TrainingStore,
    taxonomy: Taxonomy,
    config: TrainConfig,
    strategies: list[str],
    stats: AssociationStats | None = None,
) -> dict[str, CVScores]:
    """Cross-validate several post-processing strategies over shared folds.

    Fold partition, fitted vectorizers and per-label models are computed once
    and reused; only the post-processing stage differs per strategy, so the
    numbers are identical to independent runs with the same seed.
    """
    need_aug = postprocess.TACTICS_AS_FEATURES in strategies
    folds, tactic_labels, technique_labels = _run_folds(store, taxonomy, config, stats, need_aug)
    return {
        s: _score_strategy(folds, s, tactic_labels, technique_labels) for s in strategies
    }


def cross_validate(
    store: TrainingStore,
    taxonomy: Taxonomy,
    config: TrainConfig,
    strategy: str = postprocess.STRATEGY_NONE,
    stats: AssociationStats | None = None,
) -> CVScores:
    """Seeded k-fold cross-validation of the full pipeline with one strategy."""
    return cross_validate_multi(store, taxonomy, config, [strategy], stats=stats)[strategy]


def cv_scores_dict(cv: CVScores) -> dict:
    return {"tactics": cv.tactics.to_dict(), "techniques": cv.techniques.to_dict()}


# --- comparison tables ----------------------------------------------------------

@dataclass
class ComparisonRow:
    strategy: str
    scope: str
    report: MetricsReport
    sd: tuple[float, ...]   # spread across folds for each of the six metrics


def _fold_sd(folds: list[MetricsReport]) -> tuple[float, ...]:
    if not folds:
        return (0.0,) * 6
    arr = np.array([f.as_tuple() for f in folds])
    return tuple(float(x) for x in arr.std(axis=0))


def compare_strategies(
    store: TrainingStore,
    taxonomy: Taxonomy,
    config: TrainConfig,
    strategies: list[str],
    stats: AssociationStats | None = None,
) -> list[ComparisonRow]:
    """One cross-validated row per strategy plus the no-post-processing row."""
    ordered = [postprocess.STRATEGY_NONE] + [s for s in strategies if s != postprocess.STRATEGY_NONE]
    results = cross_validate_multi(store, taxonomy, config, ordered, stats=stats)
    rows: list[ComparisonRow] = []
    for strategy in ordered:
        cv = results[strategy]
        rows.append(ComparisonRow(strategy, "tactics", cv.tactics, _fold_sd(cv.tactic_folds)))
        rows.append(ComparisonRow(strategy, "techniques", cv.techniques, _fold_sd(cv.technique_folds)))
    return rows


def rows_to_csv(rows: list[ComparisonRow]) -> str:
    """Fixed columns first, then the per-fold spread for each metric."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["strategy", "scope", *METRIC_NAMES, *(f"{m}_sd" for m in METRIC_NAMES)])
    for row in rows:
        writer.writerow(
            [row.strategy, row.scope]
            + [f"{v:.6f}" for v in row.report.as_tuple()]
            + [f"{v:.6f}" for v in row.sd]
        )
    return buf.getvalue()


def rows_to_text(rows: list[ComparisonRow]) -> str:
    """Aligned percentage table with the fold spread shown as +/-."""
    header = f"{'strategy':<24} {'scope':<11}" + "".join(f"{m:>18}" for m in METRIC_NAMES)
    lines = [header, "-" * len(header)]
    for row in rows:
        cells = "".join(
            f"{100 * v:>9.2f}% ±{100 * s:>5.2f}%"
            for v, s in zip(row.report.as_tuple(), row.sd)
        )
        lines.append(f"{row.strategy:<24} {row.scope:<11}{cells}")
    return "\n".join(lines) + "\n"
