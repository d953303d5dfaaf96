import numpy as np
import pytest

from refsearch.knn import (
    BatchClassifyError,
    ClassifierConfig,
    batch_classify,
    classify,
    cosine_similarity,
    prediction_from_neighbors,
    top_k,
    top_k_batch,
)
from refsearch.store import ReferenceIndex

from oracles import brute_force_ids_fsum, brute_force_ids_np


def _index_from(vectors, labels):
    index = ReferenceIndex()
    for v, label in zip(vectors, labels):
        index.add(np.asarray(v, dtype=float), label)
    return index


def _angle_vec(sim: float):
    # 2-d unit vector whose cosine against (1, 0) is exactly `sim`.
    return (sim, np.sqrt(1.0 - sim * sim))


def test_cosine_identical_direction():
    v = np.array([0.3, -1.2, 4.0])
    assert cosine_similarity(v, v) == pytest.approx(1.0, abs=1e-12)
    assert cosine_similarity(v, 7.5 * v) == pytest.approx(1.0, abs=1e-12)


def test_cosine_orthogonal():
    assert cosine_similarity([1.0, 0.0], [0.0, 1.0]) == 0.0


def test_cosine_hand_value():
    # dot = 2+2+4 = 8, norms 3 and 3 -> 8/9
    assert cosine_similarity([1, 2, 2], [2, 1, 2]) == pytest.approx(8.0 / 9.0, abs=1e-12)


def test_cosine_errors():
    with pytest.raises(ValueError, match="mismatch"):
        cosine_similarity([1, 0], [1, 0, 0])
    with pytest.raises(ValueError, match="zero"):
        cosine_similarity([0.0, 0.0], [1.0, 0.0])


def test_top_k_self_match():
    rng = np.random.default_rng(0)
    vectors = rng.standard_normal((20, 8))
    index = _index_from(vectors, [f"c{i}" for i in range(20)])
    result = top_k(vectors[7], index, 1)
    assert result[0].id == 7
    assert result[0].similarity >= 1.0 - 1e-6


def test_top_k_clamps_to_index_size():
    rng = np.random.default_rng(1)
    vectors = rng.standard_normal((5, 4))
    index = _index_from(vectors, list("abcde"))
    result = top_k(vectors[0], index, 50)
    assert len(result) == 5
    sims = [n.similarity for n in result]
    assert sims == sorted(sims, reverse=True)


def test_top_k_errors():
    index = _index_from([[1.0, 0.0]], ["a"])
    with pytest.raises(ValueError, match="empty index"):
        top_k([1.0, 0.0], ReferenceIndex(), 1)
    with pytest.raises(ValueError, match="does not match"):
        top_k([1.0, 0.0, 0.0], index, 1)
    with pytest.raises(ValueError, match="zero"):
        top_k([0.0, 0.0], index, 1)


def test_top_k_ties_break_by_ascending_id():
    # Records 0/2/4 are identical; 1/3 identical but farther from the query.
    a = _angle_vec(0.9)
    b = _angle_vec(0.5)
    index = _index_from([a, b, a, b, a], list("vwxyz"))
    result = top_k([1.0, 0.0], index, 4)
    assert [n.id for n in result] == [0, 2, 4, 1]


def test_top_k_matches_fsum_oracle_small():
    rng = np.random.default_rng(7)
    vectors = rng.standard_normal((40, 6))
    index = _index_from(vectors, [f"c{i % 4}" for i in range(40)])
    for qi in range(10):
        query = rng.standard_normal(6)
        got = [n.id for n in top_k(query, index, 5)]
        want = brute_force_ids_fsum(query, index.vectors.astype(np.float64), 5)
        assert got == want


def test_top_k_matches_numpy_oracle_randomized():
    # 200 records x 16 dims, 50 queries, k=5 (the spec's example trial shape).
    rng = np.random.default_rng(1234)
    vectors = rng.standard_normal((200, 16))
    index = _index_from(vectors, [f"c{i % 7}" for i in range(200)])
    for _ in range(50):
        query = rng.standard_normal(16)
        got = [n.id for n in top_k(query, index, 5)]
        want = brute_force_ids_np(query, vectors, 5)
        assert got == want


def test_top_k_positive_scale_invariance():
    rng = np.random.default_rng(3)
    vectors = rng.standard_normal((64, 12))
    index = _index_from(vectors, [f"c{i % 3}" for i in range(64)])
    for _ in range(20):
        q = rng.standard_normal(12)
        base = [(n.id, n.similarity) for n in top_k(q, index, 5)]
        for alpha in (1e-3, 2.0, 1e3):
            scaled = [(n.id, n.similarity) for n in top_k(alpha * q, index, 5)]
            assert [i for i, _ in scaled] == [i for i, _ in base]
            assert classify(alpha * q, index).label == classify(q, index).label


def test_strict_majority_vote():
    # Top-5 labels (A, A, B, A, B) -> A with votes {A:3, B:2}.
    sims = [0.99, 0.97, 0.96, 0.94, 0.92]
    labels = ["A", "A", "B", "A", "B"]
    index = _index_from([_angle_vec(s) for s in sims], labels)
    pred = classify([1.0, 0.0], index, ClassifierConfig(k=5))
    assert pred.label == "A"
    assert pred.votes == {"A": 3, "B": 2}
    assert pred.effective_k == 5


def test_vote_tie_prefers_most_similar_class():
    # Top-5 (A, B, B, A, C): A and B tie 2-2; best A sim 0.95 > best B 0.90.
    sims = [0.95, 0.90, 0.88, 0.85, 0.80]
    labels = ["A", "B", "B", "A", "C"]
    index = _index_from([_angle_vec(s) for s in sims], labels)
    pred = classify([1.0, 0.0], index, ClassifierConfig(k=5))
    assert pred.label == "A"
    assert pred.votes == {"A": 2, "B": 2, "C": 1}
    # stored vectors are float32, so constructed similarities carry ~1e-7 noise
    assert pred.margin == pytest.approx(0.05, abs=1e-6)


def test_vote_tie_falls_back_to_summed_similarity():
    # Identical best sims (duplicate vectors), B has the higher sum.
    sims = [0.95, 0.95, 0.70, 0.90, 0.10]
    labels = ["A", "B", "A", "B", "C"]
    index = _index_from([_angle_vec(s) for s in sims], labels)
    pred = classify([1.0, 0.0], index, ClassifierConfig(k=4))
    assert pred.votes == {"A": 2, "B": 2}
    assert pred.label == "B"


def test_vote_tie_final_fallback_lexicographic():
    sims = [0.9, 0.9, 0.5, 0.5]
    labels = ["zeta", "alpha", "zeta", "alpha"]
    index = _index_from([_angle_vec(s) for s in sims], labels)
    pred = classify([1.0, 0.0], index, ClassifierConfig(k=4))
    assert pred.label == "alpha"


def test_k1_degenerate_vote():
    sims = [0.9, 0.8]
    index = _index_from([_angle_vec(s) for s in sims], ["A", "B"])
    pred = classify([1.0, 0.0], index, ClassifierConfig(k=1))
    assert pred.label == "A"
    assert pred.margin == 0.0
    assert pred.effective_k == 1


def test_votes_sum_to_effective_k():
    rng = np.random.default_rng(5)
    vectors = rng.standard_normal((9, 8))
    index = _index_from(vectors, [f"c{i % 4}" for i in range(9)])
    for k in (1, 5, 9, 20):
        pred = classify(rng.standard_normal(8), index, ClassifierConfig(k=k))
        assert sum(pred.votes.values()) == pred.effective_k == min(k, 9)


def test_batch_classify_matches_single():
    rng = np.random.default_rng(6)
    vectors = rng.standard_normal((120, 24))
    index = _index_from(vectors, [f"c{i % 5}" for i in range(120)])
    queries = [rng.standard_normal(24) for _ in range(40)]
    single = [classify(q, index) for q in queries]
    for workers in (None, 4):
        batch = batch_classify(queries, index, workers=workers)
        assert len(batch) == 40
        for a, b in zip(batch, single):
            assert a == b


def test_batch_classify_empty():
    assert batch_classify([], _index_from([[1.0, 0.0]], ["a"])) == []


def test_batch_classify_reports_failures_by_index():
    index = _index_from([[1.0, 0.0], [0.0, 1.0]], ["a", "b"])
    queries = [np.array([1.0, 0.1]), np.zeros(2), np.array([0.2, 1.0])]
    with pytest.raises(BatchClassifyError, match=r"\[1\]") as err:
        batch_classify(queries, index)
    assert [i for i, _ in err.value.failures] == [1]
    preds = err.value.predictions
    assert preds[1] is None
    assert preds[0].label == "a" and preds[2].label == "b"


def test_insertion_permutation_invariance_on_tie_free_data():
    rng = np.random.default_rng(8)
    vectors = rng.standard_normal((60, 10))
    labels = [f"c{i % 3}" for i in range(60)]
    index = _index_from(vectors, labels)
    perm = rng.permutation(60)
    shuffled = _index_from(vectors[perm], [labels[i] for i in perm])
    for _ in range(15):
        q = rng.standard_normal(10)
        assert classify(q, index).label == classify(q, shuffled).label


def test_tie_heavy_duplicates_use_bounded_refinement():
    # Thousands of identical directions force the widest possible candidate
    # sets (the chunked refinement path); ordering must stay exact with ids
    # ascending across the duplicates, and batch must equal single-query.
    rng = np.random.default_rng(99)
    v = rng.standard_normal(384)
    index = ReferenceIndex()
    for i in range(3000):
        index.add(v, f"dup{i % 2}")
    for _ in range(50):
        index.add(rng.standard_normal(384), "other")

    aligned = v + rng.standard_normal(384) * 1e-3
    assert [n.id for n in top_k(aligned, index, 5)] == [0, 1, 2, 3, 4]

    queries = rng.standard_normal((40, 384))
    batch = top_k_batch(queries, index, 5)
    for i in range(10):
        assert batch[i] == top_k(queries[i], index, 5)


def test_neighbor_similarities_clamped():
    index = _index_from([[1.0, 0.0]], ["a"])
    result = top_k([1.0, 0.0], index, 1)
    assert -1.0 <= result[0].similarity <= 1.0


def test_prediction_from_neighbors_is_pure():
    from refsearch.knn import Neighbor

    nbs = [Neighbor(0, "x", 0.9), Neighbor(3, "y", 0.8), Neighbor(1, "x", 0.7)]
    pred = prediction_from_neighbors(nbs)
    assert pred.label == "x"
    assert pred.votes == {"x": 2, "y": 1}
    assert pred.margin == pytest.approx(0.1, abs=1e-12)
