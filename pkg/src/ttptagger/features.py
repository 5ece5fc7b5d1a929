"""Bag-of-words vectorizer: TF or TF-IDF weighting with document-frequency
cutoffs and selection of the top half of features by summed corpus weight."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

TF = "tf"
TFIDF = "tfidf"


class FitError(ValueError):
    """Vectorizer cannot be fitted on the given corpus."""


@dataclass
class VectorizerModel:
    """Fitted vocabulary, idf weights and selection mask. Immutable in use.

    Vocabulary indices are assigned lexicographically over the surviving
    tokens; `selected` marks exactly ceil(V/2) of them. Transformed vectors
    live in the compact selected-feature space of dimension `dim`.
    """

    vocabulary: dict[str, int]
    idf: np.ndarray
    mode: str
    min_df: int
    max_df: float
    selected: np.ndarray
    n_docs: int
    selected_positions: np.ndarray = field(init=False)
    _compact: dict[int, int] = field(init=False, repr=False)

    def __post_init__(self):
        self.selected_positions = np.flatnonzero(self.selected)
        self._compact = {int(p): k for k, p in enumerate(self.selected_positions)}

    @property
    def dim(self) -> int:
        return int(self.selected.sum())

    def to_dict(self) -> dict:
        tokens = sorted(self.vocabulary, key=self.vocabulary.get)
        return {
            "tokens": tokens,
            "idf": self.idf.tolist(),
            "mode": self.mode,
            "min_df": self.min_df,
            "max_df": self.max_df,
            "selected": [bool(b) for b in self.selected],
            "n_docs": self.n_docs,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "VectorizerModel":
        tokens = data["tokens"]
        return cls(
            vocabulary={t: i for i, t in enumerate(tokens)},
            idf=np.asarray(data["idf"], dtype=np.float64),
            mode=data["mode"],
            min_df=int(data["min_df"]),
            max_df=float(data["max_df"]),
            selected=np.asarray(data["selected"], dtype=bool),
            n_docs=int(data["n_docs"]),
        )


def fit(corpus: list[list[str]], mode: str = TFIDF, min_df: int = 2, max_df: float = 0.90) -> VectorizerModel:
    """Fit vocabulary, idf and the top-half selection mask on token lists.

    Tokens survive when min_df <= df(t) and df(t)/N <= max_df. The idf uses
    add-one smoothing on both document counts plus a unit floor:
    ln((1+N)/(1+df)) + 1. Selection keeps the ceil(V/2) features with the
    highest summed corpus weight (raw counts in TF mode, count*idf in TFIDF
    mode), ties broken by lexicographic token order.
    """
    if mode not in (TF, TFIDF):
        raise ValueError(f"unknown mode {mode!r}")
    if not corpus:
        raise FitError("empty corpus")

    n_docs = len(corpus)
    df: Counter[str] = Counter()
    total: Counter[str] = Counter()
    for tokens in corpus:
        counts = Counter(tokens)
        df.update(counts.keys())
        total.update(counts)

    kept = sorted(
        t for t, d in df.items() if d >= min_df and d / n_docs <= max_df
    )
    if not kept:
        raise FitError("no tokens survive the document-frequency cutoffs")

    vocabulary = {t: i for i, t in enumerate(kept)}
    idf = np.array(
        [math.log((1.0 + n_docs) / (1.0 + df[t])) + 1.0 for t in kept], dtype=np.float64
    )

    if mode == TF:
        weight = np.array([float(total[t]) for t in kept])
    else:
        weight = np.array([total[t] * idf[vocabulary[t]] for t in kept])

    n_keep = math.ceil(len(kept) / 2)
    order = sorted(range(len(kept)), key=lambda i: (-weight[i], kept[i]))
    selected = np.zeros(len(kept), dtype=bool)
    selected[order[:n_keep]] = True

    return VectorizerModel(
        vocabulary=vocabulary,
        idf=idf,
        mode=mode,
        min_df=min_df,
        max_df=max_df,
        selected=selected,
        n_docs=n_docs,
    )


def transform(model: VectorizerModel, tokens: list[str]) -> dict[int, float]:
    """Weight one document into the compact selected-feature space.

    TF mode: raw term counts. TFIDF mode: count*idf followed by unit-norm
    scaling of the restricted vector (all-zero vectors stay zero).
    Out-of-vocabulary tokens are ignored.
    """
    counts = Counter(tokens)
    entries: dict[int, float] = {}
    for tok, cnt in counts.items():
        pos = model.vocabulary.get(tok)
        if pos is None or not model.selected[pos]:
            continue
        if model.mode == TF:
            entries[model._compact[pos]] = float(cnt)
        else:
            entries[model._compact[pos]] = cnt * float(model.idf[pos])
    if model.mode == TFIDF and entries:
        norm = math.sqrt(sum(v * v for v in entries.values()))
        if norm > 0:
            entries = {k: v / norm for k, v in entries.items()}
    return entries


def transform_matrix(model: VectorizerModel, docs: list[list[str]]) -> sparse.csr_matrix:
    """Stack transformed documents into a CSR matrix of shape (len(docs), dim)."""
    data: list[float] = []
    indices: list[int] = []
    indptr = [0]
    for tokens in docs:
        vec = transform(model, tokens)
        for k in sorted(vec):
            indices.append(k)
            data.append(vec[k])
        indptr.append(len(indices))
    return sparse.csr_matrix(
        (np.asarray(data), np.asarray(indices, dtype=np.int32), np.asarray(indptr, dtype=np.int32)),
        shape=(len(docs), model.dim),
    )
