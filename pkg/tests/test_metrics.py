import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from visassoc.embfile import EmbeddingMatrix
from visassoc.metrics import (
    AnnotationRecord,
    MetricError,
    SimilarityMatrix,
    average_abstraction_rank,
    average_rank,
    competition_ranks,
    cosine_similarity,
    evaluate_retrieval,
    fleiss_kappa,
    foil_preference,
    grounding_bucket_rate,
    matching_preference,
    paired_t_test,
    recall_at_k,
    wilcoxon_signed_rank,
)

# ---------------------------------------------------------------------------
# independent oracles


def oracle_ranks(scores: np.ndarray, gold_cols: list[int]) -> list[int]:
    """Sort each row and locate gold, ties sorting behind (gold after equals)."""
    ranks = []
    for i, j in enumerate(gold_cols):
        row = scores[i]
        order = sorted(range(len(row)), key=lambda c: (-row[c], c == j))
        ranks.append(order.index(j) + 1)
    return ranks


def oracle_mid_ranks(values: list[float]) -> list[float]:
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        average = (i + j + 2) / 2  # 1-based positions i+1 .. j+1
        for k in range(i, j + 1):
            ranks[order[k]] = average
        i = j + 1
    return ranks


def oracle_wilcoxon_p(x, y) -> float | None:
    """Two-sided exact p by enumerating all 2^n sign assignments."""
    d = [a - b for a, b in zip(x, y) if a != b]
    n = len(d)
    if n == 0:
        return None
    ranks = oracle_mid_ranks([abs(v) for v in d])
    w_plus = sum(r for r, v in zip(ranks, d) if v > 0)
    w_values = [
        sum(r for r, s in zip(ranks, signs) if s)
        for signs in itertools.product((0, 1), repeat=n)
    ]
    total = 2**n
    p_low = sum(1 for w in w_values if w <= w_plus) / total
    p_high = sum(1 for w in w_values if w >= w_plus) / total
    return min(1.0, 2.0 * min(p_low, p_high))


def sim_from_scores(scores: np.ndarray) -> SimilarityMatrix:
    q, c = scores.shape
    queries = [f"q{i}" for i in range(q)]
    candidates = [f"c{j}" for j in range(c)]
    gold = {f"q{i}": f"c{i % c}" for i in range(q)}
    return SimilarityMatrix(queries, candidates, scores, gold)


# ---------------------------------------------------------------------------
# cosine similarity


def test_cosine_identity_orthogonal_and_hand_value():
    m = EmbeddingMatrix(["u", "v"], np.array([[1.0, 0.0], [0.0, 1.0]], dtype=np.float32))
    sim = cosine_similarity(m, m)
    assert sim.scores[0][0] == pytest.approx(1.0)
    assert sim.scores[0][1] == pytest.approx(0.0)

    q = EmbeddingMatrix(["q"], np.array([[1.0, 2.0]], dtype=np.float32))
    c = EmbeddingMatrix(["c"], np.array([[2.0, 1.0]], dtype=np.float32))
    assert cosine_similarity(q, c).scores[0][0] == pytest.approx(0.8, abs=1e-12)


def test_cosine_rejects_dim_mismatch_and_zero_vector():
    a = EmbeddingMatrix(["a"], np.ones((1, 3), dtype=np.float32))
    b = EmbeddingMatrix(["b"], np.ones((1, 4), dtype=np.float32))
    with pytest.raises(MetricError, match="dimension"):
        cosine_similarity(a, b)
    z = EmbeddingMatrix(["z"], np.zeros((1, 3), dtype=np.float32))
    with pytest.raises(MetricError, match="zero vector"):
        cosine_similarity(a, z)


def test_cosine_invariant_under_positive_scaling():
    rng = np.random.default_rng(7)
    rows = rng.normal(size=(4, 8)).astype(np.float32)
    scaled = rows.copy()
    scaled[2] *= 37.5
    ids = [f"r{i}" for i in range(4)]
    base = cosine_similarity(EmbeddingMatrix(ids, rows), EmbeddingMatrix(ids, rows))
    after = cosine_similarity(EmbeddingMatrix(ids, scaled), EmbeddingMatrix(ids, rows))
    assert np.allclose(base.scores, after.scores, atol=1e-6)
    assert (base.scores.argmax(axis=1) == after.scores.argmax(axis=1)).all()


# ---------------------------------------------------------------------------
# retrieval


def test_recall_on_diagonal_dominant_matrix():
    scores = np.eye(3) + 0.01
    sim = sim_from_scores(scores)
    assert recall_at_k(sim, 1) == 1.0
    assert average_rank(sim) == 1.0


def test_recall_at_full_candidate_count_is_one():
    rng = np.random.default_rng(0)
    sim = sim_from_scores(rng.normal(size=(10, 10)))
    assert recall_at_k(sim, 10) == 1.0


def test_gold_always_last():
    scores = np.zeros((4, 6))
    for i in range(4):
        scores[i] = np.arange(6, 0, -1)
        scores[i][i] = -5.0  # gold well below everything
    sim = sim_from_scores(scores)
    assert average_rank(sim) == 6.0


def test_ranks_match_sort_oracle_on_random_matrices():
    rng = np.random.default_rng(42)
    for _ in range(100):
        scores = rng.normal(size=(20, 20))
        sim = sim_from_scores(scores)
        gold_cols = list(range(20))
        assert competition_ranks(sim).tolist() == oracle_ranks(scores, gold_cols)


def test_ranks_match_oracle_with_engineered_ties():
    rng = np.random.default_rng(3)
    for _ in range(50):
        # quantized scores force many exact ties
        scores = rng.integers(0, 4, size=(12, 12)).astype(float)
        sim = sim_from_scores(scores)
        assert competition_ranks(sim).tolist() == oracle_ranks(scores, list(range(12)))


def test_tie_with_gold_ranks_behind():
    scores = np.array([[1.0, 1.0, 0.5]])
    sim = SimilarityMatrix(["q0"], ["c0", "c1", "c2"], scores, {"q0": "c0"})
    # c1 ties the gold c0: competition rank counts it ahead
    assert competition_ranks(sim).tolist() == [2]


def test_recall_monotone_in_k():
    rng = np.random.default_rng(11)
    sim = sim_from_scores(rng.normal(size=(15, 15)))
    values = [recall_at_k(sim, k) for k in range(1, 16)]
    assert values == sorted(values)
    assert values[-1] == 1.0


def test_recall_k_bounds():
    sim = sim_from_scores(np.eye(3))
    with pytest.raises(MetricError):
        recall_at_k(sim, 0)
    with pytest.raises(MetricError):
        recall_at_k(sim, 4)


def test_evaluate_retrieval_report():
    sim = sim_from_scores(np.eye(4) + 0.01)
    report = evaluate_retrieval(sim, [1, 2, 4])
    assert report.recall_at == {1: 1.0, 2: 1.0, 4: 1.0}
    assert report.avg_rank == 1.0
    payload = report.to_json()
    assert payload["recall_at"]["1"] == 1.0


# ---------------------------------------------------------------------------
# preference rates


def test_preference_all_strictly_higher():
    assert matching_preference([1.0, 2.0, 3.0], [0.5, 1.5, 2.5]) == 1.0


def test_preference_all_tied_is_half():
    assert matching_preference([1.0, 1.0], [1.0, 1.0]) == 0.5


def test_preference_mixed():
    assert matching_preference([1.0, 0.0, 2.0, 2.0], [0.0, 1.0, 2.0, 1.0]) == pytest.approx(0.625)


def test_preference_length_mismatch():
    with pytest.raises(MetricError):
        matching_preference([1.0], [1.0, 2.0])


def test_foil_preference_same_semantics():
    a, b = [3.0, 1.0, 2.0], [1.0, 1.0, 5.0]
    assert foil_preference(a, b) == matching_preference(a, b)


@given(
    st.lists(st.floats(-5, 5, allow_nan=False), min_size=1, max_size=30),
    st.randoms(use_true_random=False),
)
def test_preference_complement_sums_to_one(a, rnd):
    b = [rnd.choice([v, v + 1.0, v - 1.0]) for v in a]
    assert matching_preference(a, b) + matching_preference(b, a) == pytest.approx(1.0)


# ---------------------------------------------------------------------------
# Wilcoxon signed-rank


def test_wilcoxon_all_zero_differences_undefined():
    result = wilcoxon_signed_rank([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
    assert result.statistic is None and result.p_value is None


def test_wilcoxon_all_positive_n5():
    x = [2.0, 3.0, 4.0, 5.0, 6.0]
    y = [1.0, 1.5, 2.0, 2.5, 3.0]
    result = wilcoxon_signed_rank(x, y)
    assert result.p_value == pytest.approx(0.0625, abs=1e-15)


def test_wilcoxon_exact_matches_enumeration_oracle():
    rng = np.random.default_rng(2024)
    for n in range(2, 13):
        for _ in range(8):
            x = rng.integers(-4, 5, size=n).astype(float)
            y = rng.integers(-4, 5, size=n).astype(float)
            expected = oracle_wilcoxon_p(x, y)
            actual = wilcoxon_signed_rank(x, y).p_value
            if expected is None:
                assert actual is None
            else:
                assert actual == pytest.approx(expected, abs=1e-12)


def test_wilcoxon_exact_handles_midrank_ties():
    x = [1.0, 2.0, 3.0, 4.0]
    y = [0.0, 1.0, 4.0, 3.0]  # |d| = 1,1,1,1 all tied
    expected = oracle_wilcoxon_p(x, y)
    assert wilcoxon_signed_rank(x, y).p_value == pytest.approx(expected, abs=1e-12)


def test_wilcoxon_approximation_close_to_exact_at_n12():
    rng = np.random.default_rng(99)
    x = rng.normal(size=12)
    y = rng.normal(size=12)
    exact = wilcoxon_signed_rank(x, y, exact_threshold=20).p_value
    approx = wilcoxon_signed_rank(x, y, exact_threshold=5).p_value
    assert approx == pytest.approx(exact, abs=0.05)


def test_wilcoxon_large_n_uses_approximation():
    rng = np.random.default_rng(5)
    x = rng.normal(size=40)
    y = x + rng.normal(scale=0.1, size=40) + 0.2
    result = wilcoxon_signed_rank(x, y)
    assert result.p_value is not None and 0.0 <= result.p_value <= 1.0


def test_wilcoxon_length_mismatch():
    with pytest.raises(MetricError):
        wilcoxon_signed_rank([1.0], [1.0, 2.0])


# ---------------------------------------------------------------------------
# paired t-test


def test_paired_t_zero_variance_undefined():
    result = paired_t_test([2.0, 3.0, 4.0, 5.0], [1.0, 2.0, 3.0, 4.0])
    assert result.statistic is None and result.p_value is None


def test_paired_t_symmetric_differences():
    x = [1.0, 0.0, 1.0, 0.0]
    y = [0.0, 1.0, 0.0, 1.0]
    t, p = paired_t_test(x, y)
    assert t == pytest.approx(0.0, abs=1e-15)
    assert p == pytest.approx(1.0, abs=1e-9)


def test_paired_t_matches_hand_formula():
    x = [3.0, 1.0, 4.0, 1.5, 2.5, 0.5]
    y = [1.0, 2.0, 1.0, 1.0, 1.0, 1.0]
    d = [a - b for a, b in zip(x, y)]
    n = len(d)
    mean = sum(d) / n
    variance = sum((v - mean) ** 2 for v in d) / (n - 1)
    expected_t = mean / math.sqrt(variance / n)
    t, p = paired_t_test(x, y)
    assert t == pytest.approx(expected_t, abs=1e-9)
    assert 0.0 < p < 1.0
    # cross-check p against the reference implementation
    from scipy.stats import ttest_rel

    ref = ttest_rel(x, y)
    assert t == pytest.approx(float(ref.statistic), abs=1e-12)
    assert p == pytest.approx(float(ref.pvalue), abs=1e-12)


def test_paired_t_needs_two_pairs():
    with pytest.raises(MetricError):
        paired_t_test([1.0], [2.0])


# ---------------------------------------------------------------------------
# Fleiss kappa


def test_fleiss_perfect_agreement_is_one():
    # 4 items, 3 raters, two categories both in use
    table = [[3, 0], [0, 3], [3, 0], [0, 3]]
    assert fleiss_kappa(table, 3) == pytest.approx(1.0, abs=1e-12)


def test_fleiss_two_item_hand_fixture():
    # raters (A, A) on item 1 and (A, B) on item 2:
    # P1 = 1, P2 = 0, P-bar = 1/2; pA = 3/4, pB = 1/4, Pe = 10/16
    # kappa = (1/2 - 5/8) / (1 - 5/8) = -1/3
    table = [[2, 0], [1, 1]]
    assert fleiss_kappa(table, 2) == pytest.approx(-1.0 / 3.0, abs=1e-9)


def test_fleiss_undefined_when_one_category_holds_all_mass():
    table = [[3, 0], [3, 0]]
    assert fleiss_kappa(table, 3) is None


def test_fleiss_decreases_when_item_maximally_split():
    agreed = [[3, 0, 0], [0, 3, 0], [3, 0, 0]]
    split = [[3, 0, 0], [0, 3, 0], [1, 1, 1]]
    assert fleiss_kappa(split, 3) < fleiss_kappa(agreed, 3)


def test_fleiss_validates_row_sums():
    with pytest.raises(MetricError):
        fleiss_kappa([[2, 0], [1, 1]], 3)
    with pytest.raises(MetricError):
        fleiss_kappa([[1, 0], [0, 1]])  # single rater
    with pytest.raises(MetricError):
        fleiss_kappa([[2, 0]], 2)  # single item


def test_fleiss_reference_wikipedia_fixture():
    # classic worked example: 10 items, 14 raters, kappa ~ 0.210
    table = [
        [0, 0, 0, 0, 14],
        [0, 2, 6, 4, 2],
        [0, 0, 3, 5, 6],
        [0, 3, 9, 2, 0],
        [2, 2, 8, 1, 1],
        [7, 7, 0, 0, 0],
        [3, 2, 6, 3, 0],
        [2, 5, 3, 2, 2],
        [6, 5, 2, 1, 0],
        [0, 2, 2, 3, 7],
    ]
    assert fleiss_kappa(table, 14) == pytest.approx(0.20993, abs=1e-4)


# ---------------------------------------------------------------------------
# annotation aggregation


def grounding_record(item, rating, degree, annotator="a1"):
    return AnnotationRecord(
        task="grounding", item_id=item, annotator_id=annotator,
        rating=rating, degree=degree,
    )


def test_grounding_bucket_all_fours():
    records = [
        grounding_record(f"i{d}{j}", 4, d) for d in range(1, 6) for j in range(3)
    ]
    rates = grounding_bucket_rate(records)
    assert rates == {d: 100.0 for d in range(1, 6)}


def test_grounding_bucket_majority_and_tie_rules():
    records = [
        grounding_record("i1", 2, 1, "a"),
        grounding_record("i1", 3, 1, "b"),
        grounding_record("i1", 3, 1, "c"),  # 2-of-3 grounded -> grounded
        grounding_record("i2", 2, 1, "a"),
        grounding_record("i2", 4, 1, "b"),  # 1-1 tie -> lower bucket
        grounding_record("i3", 1, 1, "a"),  # not grounded
        grounding_record("i4", 3, 1, "a"),  # grounded
    ]
    rates = grounding_bucket_rate(records)
    assert rates == {1: 50.0}


def test_grounding_bucket_known_percentages():
    records = []
    # degree 1: 9 of 10 grounded; degree 2: 4 of 5
    for j in range(10):
        records.append(grounding_record(f"a{j}", 4 if j < 9 else 1, 1))
    for j in range(5):
        records.append(grounding_record(f"b{j}", 3 if j < 4 else 2, 2))
    rates = grounding_bucket_rate(records)
    assert rates == {1: 90.0, 2: 80.0}


def ranking_record(item, annotator, ranking, types=None):
    return AnnotationRecord(
        task="ranking", item_id=item, annotator_id=annotator,
        ranking=tuple(ranking),
        caption_types=tuple(types or ("original", "d1", "d2", "d3", "d4", "d5")),
    )


def test_abstraction_rank_true_order():
    records = [ranking_record(f"i{j}", "a", (1, 2, 3, 4, 5, 6)) for j in range(4)]
    means = average_abstraction_rank(records)
    assert means == {
        "original": 1.0, "d1": 2.0, "d2": 3.0, "d3": 4.0, "d4": 5.0, "d5": 6.0,
    }


def test_abstraction_rank_reversed_pair_averages():
    records = [
        ranking_record("i0", "a", (1, 2, 3, 4, 5, 6)),
        ranking_record("i0", "b", (6, 5, 4, 3, 2, 1)),
    ]
    means = average_abstraction_rank(records)
    assert all(v == 3.5 for v in means.values())


def test_abstraction_rank_respects_presentation_order():
    # shuffled presentation: types permuted, ranks assigned per slot
    records = [
        ranking_record("i0", "a", (2, 1, 4, 3, 6, 5),
                       types=("d1", "original", "d3", "d2", "d5", "d4")),
    ]
    means = average_abstraction_rank(records)
    assert means["original"] == 1.0
    assert means["d5"] == 6.0


def test_annotation_record_validation():
    with pytest.raises(MetricError):
        AnnotationRecord(task="grounding", item_id="i", annotator_id="a", rating=5)
    with pytest.raises(MetricError):
        AnnotationRecord(task="ranking", item_id="i", annotator_id="a",
                         ranking=(1, 2, 3, 4, 5, 5))
    with pytest.raises(MetricError):
        AnnotationRecord(task="grounding", item_id="i", annotator_id="a",
                         rating=3, ranking=(1, 2, 3, 4, 5, 6))
    with pytest.raises(MetricError):
        AnnotationRecord(task="mystery", item_id="i", annotator_id="a", rating=3)


def test_annotation_record_json_round_trip():
    record = grounding_record("i0", 3, 4)
    assert AnnotationRecord.from_json(record.to_json()) == record
    record = ranking_record("i1", "b", (3, 1, 5, 2, 6, 4))
    assert AnnotationRecord.from_json(record.to_json()) == record
