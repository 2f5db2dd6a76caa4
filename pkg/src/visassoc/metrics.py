"""Evaluation metrics: retrieval, pairwise preference, significance tests,
and human-annotation aggregation.

Ranking uses competition ranks with full tie penalty: the gold candidate's
rank is 1 + the number of other candidates scoring greater than or equal to
it.  Pairwise preference counts ties as half a win, so p(A over B) and
p(B over A) always sum to 1.  The Wilcoxon p-value is exact (equivalent to
enumerating all 2^n sign assignments) up to ``exact_threshold`` pairs and a
normal approximation with continuity and tie corrections above.
"""

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np
from scipy.special import stdtr
from scipy.stats import rankdata

from .embfile import EmbeddingMatrix

GROUNDING_SCALE = (1, 2, 3, 4)
RANKING_SLOTS = 6
CAPTION_TYPES = ("original", "d1", "d2", "d3", "d4", "d5")


class MetricError(ValueError):
    """Invalid metric input."""


# ---------------------------------------------------------------------------
# similarity and retrieval


@dataclass
class SimilarityMatrix:
    """Dense query x candidate scores plus the gold candidate per query."""

    query_ids: list[str]
    candidate_ids: list[str]
    scores: np.ndarray
    gold: dict[str, str] | None = None

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.scores.shape != (len(self.query_ids), len(self.candidate_ids)):
            raise MetricError(
                f"scores shape {self.scores.shape} does not match "
                f"{len(self.query_ids)} queries x {len(self.candidate_ids)} candidates"
            )
        if not np.isfinite(self.scores).all():
            raise MetricError("scores must be finite")
        if self.gold is not None:
            candidates = set(self.candidate_ids)
            queries = set(self.query_ids)
            for query, candidate in self.gold.items():
                if query not in queries:
                    raise MetricError(f"gold query {query!r} not among queries")
                if candidate not in candidates:
                    raise MetricError(
                        f"gold candidate {candidate!r} not among candidates"
                    )

    @property
    def n_candidates(self) -> int:
        return len(self.candidate_ids)


@dataclass
class EvalReport:
    recall_at: dict[int, float] = field(default_factory=dict)
    avg_rank: float | None = None
    preference_rate: float | None = None
    p_value: float | None = None
    test_name: str | None = None

    def to_json(self) -> dict:
        return {
            "recall_at": {str(k): v for k, v in sorted(self.recall_at.items())},
            "avg_rank": self.avg_rank,
            "preference_rate": self.preference_rate,
            "p_value": self.p_value,
            "test_name": self.test_name,
        }


def cosine_similarity(
    queries: EmbeddingMatrix,
    candidates: EmbeddingMatrix,
    gold: Mapping[str, str] | None = None,
) -> SimilarityMatrix:
    """Pairwise cosine scores; rows with zero norm are an error."""
    if queries.dim != candidates.dim:
        raise MetricError(
            f"dimension mismatch: queries {queries.dim} vs candidates {candidates.dim}"
        )
    q = queries.rows.astype(np.float64)
    c = candidates.rows.astype(np.float64)
    q_norms = np.linalg.norm(q, axis=1)
    c_norms = np.linalg.norm(c, axis=1)
    if (q_norms == 0).any() or (c_norms == 0).any():
        raise MetricError("zero vector has no cosine similarity")
    scores = (q / q_norms[:, None]) @ (c / c_norms[:, None]).T
    return SimilarityMatrix(
        list(queries.ids),
        list(candidates.ids),
        scores,
        dict(gold) if gold is not None else None,
    )


def competition_ranks(sim: SimilarityMatrix) -> np.ndarray:
    """Gold candidate's competition rank per query: ties rank behind."""
    if sim.gold is None:
        raise MetricError("similarity matrix has no gold mapping")
    candidate_index = {c: j for j, c in enumerate(sim.candidate_ids)}
    ranks = np.empty(len(sim.query_ids), dtype=np.int64)
    for i, query in enumerate(sim.query_ids):
        try:
            j = candidate_index[sim.gold[query]]
        except KeyError:
            raise MetricError(f"no gold candidate for query {query!r}") from None
        row = sim.scores[i]
        # 1 + #{others >= gold}; the count includes gold itself, hence no +1
        ranks[i] = int(np.count_nonzero(row >= row[j]))
    return ranks


def recall_at_k(sim: SimilarityMatrix, k: int) -> float:
    """Fraction of queries whose gold candidate ranks at or above k."""
    if not 1 <= k <= sim.n_candidates:
        raise MetricError(f"k must be in [1, {sim.n_candidates}], got {k}")
    ranks = competition_ranks(sim)
    return float(np.count_nonzero(ranks <= k) / len(ranks))


def average_rank(sim: SimilarityMatrix) -> float:
    """Mean competition rank of the gold candidate (lower is better)."""
    return float(competition_ranks(sim).mean())


def evaluate_retrieval(sim: SimilarityMatrix, ks: Sequence[int]) -> EvalReport:
    return EvalReport(
        recall_at={int(k): recall_at_k(sim, int(k)) for k in ks},
        avg_rank=average_rank(sim),
    )


# ---------------------------------------------------------------------------
# pairwise preference


def matching_preference(
    sim_correct: Sequence[float], sim_incorrect: Sequence[float]
) -> float:
    """How often the first score beats the second; ties count half."""
    a = np.asarray(sim_correct, dtype=np.float64)
    b = np.asarray(sim_incorrect, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise MetricError(f"score lists must match in length: {a.shape} vs {b.shape}")
    if len(a) == 0:
        raise MetricError("preference of empty score lists is undefined")
    wins = np.count_nonzero(a > b) + 0.5 * np.count_nonzero(a == b)
    return float(wins / len(a))


def foil_preference(sim_a: Sequence[float], sim_b: Sequence[float]) -> float:
    """Pairwise preference rate between two caption families (original,
    creative at a degree, or hallucinated foils); same tie convention as
    ``matching_preference``."""
    return matching_preference(sim_a, sim_b)


# ---------------------------------------------------------------------------
# significance tests


class TestResult(NamedTuple):
    statistic: float | None
    p_value: float | None


def wilcoxon_signed_rank(
    x: Sequence[float], y: Sequence[float], exact_threshold: int = 20
) -> TestResult:
    """Two-sided Wilcoxon signed-rank test on paired samples.

    Zero differences are dropped; tied absolute differences take mid-ranks.
    With n <= ``exact_threshold`` the p-value is exact over all 2^n sign
    assignments (computed by convolution, identical to full enumeration);
    above that a normal approximation with continuity and tie corrections
    applies.  Returns (None, None) when every difference is zero.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise MetricError(f"paired samples must match in length: {x.shape} vs {y.shape}")
    d = x - y
    d = d[d != 0]
    n = len(d)
    if n == 0:
        return TestResult(None, None)
    ranks = rankdata(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    statistic = min(w_plus, w_minus)

    if n <= exact_threshold:
        p = _wilcoxon_exact_p(ranks, w_plus)
    else:
        p = _wilcoxon_approx_p(ranks, w_plus, n)
    return TestResult(statistic, p)


def _wilcoxon_exact_p(ranks: np.ndarray, w_plus: float) -> float:
    # Distribution of 2*W+ over all sign assignments; doubling makes
    # mid-ranks integral so the convolution stays exact.
    doubled = np.rint(2 * ranks).astype(np.int64)
    total = int(doubled.sum())
    counts = np.zeros(total + 1, dtype=np.float64)
    counts[0] = 1.0
    for r in doubled:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[: total + 1 - r]
        counts += shifted
    n_assignments = 2.0 ** len(ranks)
    w2 = int(round(2 * w_plus))
    p_low = counts[: w2 + 1].sum() / n_assignments
    p_high = counts[w2:].sum() / n_assignments
    return min(1.0, 2.0 * min(p_low, p_high))


def _wilcoxon_approx_p(ranks: np.ndarray, w_plus: float, n: int) -> float:
    mean = n * (n + 1) / 4.0
    variance = n * (n + 1) * (2 * n + 1) / 24.0
    _, tie_counts = np.unique(ranks, return_counts=True)
    variance -= ((tie_counts**3 - tie_counts) / 48.0).sum()
    if variance <= 0:
        return 1.0
    deviation = w_plus - mean
    deviation -= 0.5 * np.sign(deviation)  # continuity correction
    z = deviation / math.sqrt(variance)
    return math.erfc(abs(z) / math.sqrt(2.0))


def paired_t_test(x: Sequence[float], y: Sequence[float]) -> TestResult:
    """Two-sided paired t-test; (None, None) when the differences have zero
    variance."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise MetricError(f"paired samples must match in length: {x.shape} vs {y.shape}")
    n = len(x)
    if n < 2:
        raise MetricError("paired t-test needs at least 2 pairs")
    d = x - y
    sd = d.std(ddof=1)
    if sd == 0:
        return TestResult(None, None)
    t = float(d.mean() / (sd / math.sqrt(n)))
    p = float(2.0 * stdtr(n - 1, -abs(t)))
    return TestResult(t, p)


def fleiss_kappa(
    table: Sequence[Sequence[int]], raters_per_item: int | None = None
) -> float | None:
    """Fleiss' kappa from an item x category count matrix.

    Every row must sum to the same number of raters (>= 2).  Returns None
    when expected agreement is 1 (all mass in one category), where kappa is
    undefined.
    """
    counts = np.asarray(table, dtype=np.float64)
    if counts.ndim != 2 or counts.shape[0] < 2:
        raise MetricError("need an item x category matrix with at least 2 items")
    if (counts < 0).any():
        raise MetricError("counts must be non-negative")
    row_sums = counts.sum(axis=1)
    if raters_per_item is None:
        raters_per_item = int(row_sums[0])
    if not (row_sums == raters_per_item).all():
        raise MetricError(f"every item must have exactly {raters_per_item} ratings")
    if raters_per_item < 2:
        raise MetricError("agreement needs at least 2 raters per item")

    n = raters_per_item
    per_item = ((counts**2).sum(axis=1) - n) / (n * (n - 1))
    p_bar = per_item.mean()
    proportions = counts.sum(axis=0) / counts.sum()
    p_expected = float((proportions**2).sum())
    if p_expected == 1.0:
        return None
    return float((p_bar - p_expected) / (1.0 - p_expected))


# ---------------------------------------------------------------------------
# human-annotation aggregation


@dataclass(frozen=True)
class AnnotationRecord:
    """One human judgment: a 1..4 grounding rating or a permutation ranking
    of six presented captions.

    Grounding records carry the hidden degree of the rated caption; ranking
    records carry the true caption type of each presented slot so ranks can
    be aggregated per type.
    """

    task: str
    item_id: str
    annotator_id: str
    rating: int | None = None
    ranking: tuple[int, ...] | None = None
    degree: int | None = None
    caption_types: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.task == "grounding":
            if self.ranking is not None or self.rating is None:
                raise MetricError("grounding records carry exactly a rating")
            if self.rating not in GROUNDING_SCALE:
                raise MetricError(f"rating must be in {GROUNDING_SCALE}")
        elif self.task == "ranking":
            if self.rating is not None or self.ranking is None:
                raise MetricError("ranking records carry exactly a ranking")
            object.__setattr__(self, "ranking", tuple(int(r) for r in self.ranking))
            if sorted(self.ranking) != list(range(1, RANKING_SLOTS + 1)):
                raise MetricError(
                    f"ranking must be a permutation of 1..{RANKING_SLOTS}"
                )
            if self.caption_types is not None:
                object.__setattr__(self, "caption_types", tuple(self.caption_types))
                if len(self.caption_types) != RANKING_SLOTS:
                    raise MetricError(f"need {RANKING_SLOTS} caption types")
        else:
            raise MetricError(f"unknown task {self.task!r}")

    def to_json(self) -> dict:
        obj: dict = {
            "task": self.task,
            "item_id": self.item_id,
            "annotator_id": self.annotator_id,
        }
        if self.task == "grounding":
            obj["rating"] = self.rating
            if self.degree is not None:
                obj["degree"] = self.degree
        else:
            obj["ranking"] = list(self.ranking or ())
            if self.caption_types is not None:
                obj["caption_types"] = list(self.caption_types)
        return obj

    @classmethod
    def from_json(cls, obj: dict) -> "AnnotationRecord":
        ranking = obj.get("ranking")
        caption_types = obj.get("caption_types")
        return cls(
            task=obj["task"],
            item_id=str(obj["item_id"]),
            annotator_id=str(obj["annotator_id"]),
            rating=obj.get("rating"),
            ranking=tuple(ranking) if ranking is not None else None,
            degree=obj.get("degree"),
            caption_types=tuple(caption_types) if caption_types is not None else None,
        )


def grounding_bucket_rate(
    records: Iterable[AnnotationRecord], threshold: int = 3
) -> dict[int, float]:
    """Per-degree percentage of items judged grounded (rating >= threshold).

    Multi-annotator items aggregate by majority; ties resolve to the lower
    (not grounded) bucket.
    """
    by_item: dict[str, list[AnnotationRecord]] = {}
    for record in records:
        if record.task != "grounding":
            raise MetricError("grounding_bucket_rate expects grounding records")
        if record.degree is None:
            raise MetricError(f"record for item {record.item_id!r} has no degree")
        by_item.setdefault(record.item_id, []).append(record)

    grounded: dict[int, int] = {}
    totals: dict[int, int] = {}
    for item_records in by_item.values():
        degree = item_records[0].degree
        if any(r.degree != degree for r in item_records):
            raise MetricError("inconsistent degree within one item")
        assert degree is not None
        yes = sum(1 for r in item_records if (r.rating or 0) >= threshold)
        no = len(item_records) - yes
        totals[degree] = totals.get(degree, 0) + 1
        if yes > no:
            grounded[degree] = grounded.get(degree, 0) + 1
    return {
        degree: 100.0 * grounded.get(degree, 0) / totals[degree]
        for degree in sorted(totals)
    }


def average_abstraction_rank(
    records: Iterable[AnnotationRecord],
) -> dict[str, float]:
    """Mean assigned rank (1 = least abstract) per caption type, across items
    and annotators."""
    sums: dict[str, float] = {}
    counts: dict[str, int] = {}
    for record in records:
        if record.task != "ranking":
            raise MetricError("average_abstraction_rank expects ranking records")
        if record.caption_types is None:
            raise MetricError(f"record for item {record.item_id!r} has no caption types")
        assert record.ranking is not None
        for slot, caption_type in enumerate(record.caption_types):
            sums[caption_type] = sums.get(caption_type, 0.0) + record.ranking[slot]
            counts[caption_type] = counts.get(caption_type, 0) + 1
    return {t: sums[t] / counts[t] for t in sorted(sums)}


def load_annotations(path) -> list[AnnotationRecord]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                records.append(AnnotationRecord.from_json(json.loads(line)))
    return records
