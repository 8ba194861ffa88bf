"""Summarization and classification metrics.

ROUGE-n here is the F-measure (beta=1) over clipped n-gram multiset
matches of lowercased surface tokens — no stemming, no stopword removal.
The soft similarity F1 is a greedy cosine-matching stand-in for a learned
semantic metric: recall is the mean over reference tokens of the best
cosine against any candidate token, precision is symmetric. The two
aggregates are plain arithmetic means; the task aggregate deliberately
averages only two components (its original third component is omitted —
see the report labeling).
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np

from .embedding import metric_tokens


@dataclass(frozen=True)
class RougeScore:
    precision: float
    recall: float
    f1: float

    @classmethod
    def from_counts(cls, overlap: int, n_candidate: int, n_reference: int) -> "RougeScore":
        p = overlap / n_candidate if n_candidate else 0.0
        r = overlap / n_reference if n_reference else 0.0
        f1 = 2 * p * r / (p + r) if (p + r) > 0 else 0.0
        return cls(p, r, f1)


@dataclass(frozen=True)
class SimilarityScore:
    precision: float
    recall: float
    f1: float


def _ngrams(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def rouge_n(candidate: str, reference: str, n: int) -> RougeScore:
    if n < 1:
        raise ValueError("n must be >= 1")
    cand = _ngrams(metric_tokens(candidate), n)
    ref = _ngrams(metric_tokens(reference), n)
    overlap = sum((cand & ref).values())
    return RougeScore.from_counts(overlap, sum(cand.values()), sum(ref.values()))


def soft_similarity_f1(candidate: str, reference: str, embedder) -> SimilarityScore:
    cand_tokens = metric_tokens(candidate)
    ref_tokens = metric_tokens(reference)
    if not cand_tokens or not ref_tokens:
        return SimilarityScore(0.0, 0.0, 0.0)
    c = embedder.vectors(cand_tokens).astype(np.float64)
    r = embedder.vectors(ref_tokens).astype(np.float64)
    c_norm = np.linalg.norm(c, axis=1, keepdims=True)
    r_norm = np.linalg.norm(r, axis=1, keepdims=True)
    c = np.divide(c, c_norm, out=np.zeros_like(c), where=c_norm != 0)
    r = np.divide(r, r_norm, out=np.zeros_like(r), where=r_norm != 0)
    sim = c @ r.T  # (n_cand, n_ref)
    precision = float(sim.max(axis=1).mean())
    recall = float(sim.max(axis=0).mean())
    if precision + recall == 0:
        f1 = 0.0
    else:
        # Harmonic mean; clamped because mixed-sign cosines can push the
        # raw ratio outside the score's documented range.
        f1 = float(np.clip(2 * precision * recall / (precision + recall), -1.0, 1.0))
    return SimilarityScore(precision, recall, f1)


def accuracy(predictions: list[int], gold: list[int]) -> float:
    if len(predictions) != len(gold):
        raise ValueError(
            f"length mismatch: {len(predictions)} predictions vs {len(gold)} gold labels"
        )
    if not gold:
        raise ValueError("cannot compute accuracy of an empty list")
    return sum(int(p == g) for p, g in zip(predictions, gold)) / len(gold)


def task_aggregate(r1: RougeScore, sim: SimilarityScore) -> float:
    """Two-component mean (lexical F1 + soft-similarity F1)."""
    return (r1.f1 + sim.f1) / 2.0


def tuning_objective(r1: RougeScore, r2: RougeScore, sim: SimilarityScore) -> float:
    """The decoding-search objective: mean of ROUGE-1, ROUGE-2 and soft F1."""
    return (r1.f1 + r2.f1 + sim.f1) / 3.0


def score_summary(candidate: str, reference: str, embedder) -> dict:
    """Per-example metric row used by reports and the tuner."""
    r1 = rouge_n(candidate, reference, 1)
    r2 = rouge_n(candidate, reference, 2)
    sim = soft_similarity_f1(candidate, reference, embedder)
    return {
        "rouge1_f1": r1.f1,
        "rouge2_f1": r2.f1,
        "similarity_f1": sim.f1,
        "task_aggregate": task_aggregate(r1, sim),
        "tuning_objective": tuning_objective(r1, r2, sim),
    }
