import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ttptagger import features
from ttptagger.features import TF, TFIDF, FitError, VectorizerModel


CORPUS = [
    ["attacker", "used", "mimikatz", "mimikatz"],
    ["mimikatz", "dumped", "credentials"],
    ["attacker", "moved", "laterally", "used", "credentials"],
]


def test_smoothed_idf_hand_value():
    model = features.fit(CORPUS, mode=TFIDF, min_df=1, max_df=1.0)
    pos = model.vocabulary["mimikatz"]
    # three docs, present in two of them
    assert model.idf[pos] == pytest.approx(math.log(4 / 3) + 1.0, abs=1e-12)


def test_min_df_cutoff_excludes_rare_token():
    model = features.fit(CORPUS, mode=TF, min_df=2, max_df=1.0)
    assert "dumped" not in model.vocabulary        # appears in one doc only
    assert "attacker" in model.vocabulary


def test_max_df_cutoff_excludes_common_token():
    corpus = [["common", f"rare{k}", f"rare{k}b"] for k in range(10)]
    model = features.fit(corpus, mode=TF, min_df=1, max_df=0.5)
    assert "common" not in model.vocabulary


def test_exactly_half_selected():
    corpus = [[f"tok{chr(97 + k)}"] * (k + 1) for k in range(10)]
    corpus = [sum(corpus, [])]  # one doc holding all 10 tokens
    model = features.fit(corpus, mode=TF, min_df=1, max_df=1.0)
    assert len(model.vocabulary) == 10
    assert int(model.selected.sum()) == 5
    assert model.dim == 5


def test_half_selection_rounds_up():
    corpus = [["aa", "bb", "cc"], ["aa", "bb", "cc"]]
    model = features.fit(corpus, mode=TF, min_df=1, max_df=1.0)
    assert model.dim == 2   # ceil(3/2)


def test_selection_tie_breaks_lexicographically():
    corpus = [["bb", "aa", "cc", "dd"], ["dd", "cc", "aa", "bb"]]
    model = features.fit(corpus, mode=TF, min_df=1, max_df=1.0)
    kept = {tok for tok, pos in model.vocabulary.items() if model.selected[pos]}
    assert kept == {"aa", "bb"}   # all weights equal; lexicographic order decides


def test_empty_vocabulary_is_fit_error():
    with pytest.raises(FitError):
        features.fit([["once"], ["twice"]], min_df=3)
    with pytest.raises(FitError):
        features.fit([])


def test_transform_counts_in_tf_mode():
    model = features.fit(CORPUS, mode=TF, min_df=1, max_df=1.0)
    vec = features.transform(model, ["mimikatz", "mimikatz", "mimikatz"])
    assert len(vec) == 1
    assert list(vec.values()) == [3.0]


def test_transform_oov_and_empty():
    model = features.fit(CORPUS, mode=TFIDF, min_df=1, max_df=1.0)
    assert features.transform(model, ["neverseen"]) == {}
    assert features.transform(model, []) == {}


def test_tfidf_vectors_unit_norm():
    model = features.fit(CORPUS, mode=TFIDF, min_df=1, max_df=1.0)
    for doc in CORPUS + [["attacker", "credentials"]]:
        vec = features.transform(model, doc)
        if vec:
            norm = math.sqrt(sum(v * v for v in vec.values()))
            assert abs(norm - 1.0) < 1e-9


def test_corpus_order_invariance():
    base = features.fit(CORPUS, mode=TFIDF, min_df=1, max_df=1.0)
    shuffled = CORPUS[::-1]
    other = features.fit(shuffled, mode=TFIDF, min_df=1, max_df=1.0)
    assert base.vocabulary == other.vocabulary
    assert np.array_equal(base.selected, other.selected)
    assert np.allclose(base.idf, other.idf)
    doc = ["attacker", "used", "credentials"]
    assert features.transform(base, doc) == features.transform(other, doc)


def test_refit_is_stable():
    a = features.fit(CORPUS, mode=TFIDF, min_df=1, max_df=1.0)
    b = features.fit([list(d) for d in CORPUS], mode=TFIDF, min_df=1, max_df=1.0)
    assert a.vocabulary == b.vocabulary
    assert np.array_equal(a.selected, b.selected)


def test_transform_matrix_matches_transform():
    model = features.fit(CORPUS, mode=TFIDF, min_df=1, max_df=1.0)
    X = features.transform_matrix(model, CORPUS)
    assert X.shape == (3, model.dim)
    for row, doc in enumerate(CORPUS):
        dense = X[row].toarray().ravel()
        vec = features.transform(model, doc)
        for k, v in vec.items():
            assert dense[k] == pytest.approx(v)
        assert np.count_nonzero(dense) == len(vec)


def test_serialization_roundtrip():
    model = features.fit(CORPUS, mode=TFIDF, min_df=1, max_df=1.0)
    clone = VectorizerModel.from_dict(model.to_dict())
    assert clone.vocabulary == model.vocabulary
    assert np.allclose(clone.idf, model.idf)
    assert np.array_equal(clone.selected, model.selected)
    doc = ["attacker", "mimikatz"]
    assert features.transform(clone, doc) == features.transform(model, doc)


@settings(max_examples=40)
@given(st.lists(st.lists(st.sampled_from(["aa", "bb", "cc", "dd", "ee"]), min_size=1, max_size=8),
                min_size=2, max_size=8))
def test_tfidf_norm_property(corpus):
    try:
        model = features.fit(corpus, mode=TFIDF, min_df=1, max_df=1.0)
    except FitError:
        return
    for doc in corpus:
        vec = features.transform(model, doc)
        norm = math.sqrt(sum(v * v for v in vec.values()))
        assert norm == 0.0 or abs(norm - 1.0) < 1e-9
