"""Lexical-overlap and soft-similarity scoring against brute-force oracles."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from scribelab.embedding import RandomProjectionEmbedder, metric_tokens
from scribelab.metrics import (
    RougeScore,
    accuracy,
    rouge_n,
    score_summary,
    soft_similarity_f1,
    task_aggregate,
    tuning_objective,
)

WORDS = st.lists(st.sampled_from("alpha beta gamma delta zeta".split()),
                 min_size=0, max_size=12)


@pytest.fixture(scope="module")
def embedder():
    return RandomProjectionEmbedder(dim=64)


def _brute_force_rouge(cand_tokens, ref_tokens, n):
    """Count clipped n-gram overlap with explicit loops, no Counter algebra."""
    cand_grams = [tuple(cand_tokens[i : i + n]) for i in range(len(cand_tokens) - n + 1)]
    ref_grams = [tuple(ref_tokens[i : i + n]) for i in range(len(ref_tokens) - n + 1)]
    overlap = 0
    for gram in set(cand_grams):
        overlap += min(cand_grams.count(gram), ref_grams.count(gram))
    p = overlap / len(cand_grams) if cand_grams else 0.0
    r = overlap / len(ref_grams) if ref_grams else 0.0
    f1 = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f1


def test_reference_fixture_three_vs_two_words():
    # unigrams: overlap 2, |cand|=3, |ref|=2 -> P=2/3, R=1, F1=0.8
    got = rouge_n("the cat sat", "the cat", 1)
    assert got.precision == pytest.approx(2.0 / 3.0, abs=1e-9)
    assert got.recall == pytest.approx(1.0, abs=1e-9)
    assert got.f1 == pytest.approx(0.8, abs=1e-9)


def test_repeated_candidate_tokens_are_clipped():
    got = rouge_n("the the the", "the", 1)
    assert got.precision == pytest.approx(1.0 / 3.0)
    assert got.recall == 1.0


def test_bigram_fixture():
    got = rouge_n("the cat sat down", "the cat sat", 2)
    assert got.precision == pytest.approx(2.0 / 3.0)
    assert got.recall == pytest.approx(1.0)


def test_empty_sides_score_zero():
    for cand, ref in [("", "the cat"), ("the cat", ""), ("", "")]:
        got = rouge_n(cand, ref, 1)
        assert (got.precision, got.recall, got.f1) == (0.0, 0.0, 0.0)


def test_rouge_rejects_bad_n():
    with pytest.raises(ValueError):
        rouge_n("a", "a", 0)


def test_random_cases_match_brute_force():
    rng = np.random.default_rng(42)
    alphabet = ["aa", "bb", "cc", "dd"]
    for case in range(100):
        n = int(rng.integers(1, 4))
        cand = [alphabet[i] for i in rng.integers(0, 4, size=rng.integers(0, 10))]
        ref = [alphabet[i] for i in rng.integers(0, 4, size=rng.integers(0, 10))]
        got = rouge_n(" ".join(cand), " ".join(ref), n)
        p, r, f1 = _brute_force_rouge(cand, ref, n)
        assert got.precision == pytest.approx(p, abs=1e-12), case
        assert got.recall == pytest.approx(r, abs=1e-12), case
        assert got.f1 == pytest.approx(f1, abs=1e-12), case


@given(a=WORDS, b=WORDS)
def test_swapping_sides_swaps_precision_and_recall(a, b):
    fwd = rouge_n(" ".join(a), " ".join(b), 1)
    rev = rouge_n(" ".join(b), " ".join(a), 1)
    assert fwd.precision == rev.recall
    assert fwd.recall == rev.precision
    assert fwd.f1 == pytest.approx(rev.f1, abs=1e-12)


@given(a=WORDS, b=WORDS)
def test_scores_stay_in_unit_interval(a, b):
    got = rouge_n(" ".join(a), " ".join(b), 1)
    assert 0.0 <= got.precision <= 1.0
    assert 0.0 <= got.recall <= 1.0
    assert 0.0 <= got.f1 <= 1.0


@given(a=st.lists(st.sampled_from("alpha beta gamma".split()), min_size=1, max_size=8))
def test_identical_texts_score_one(a):
    text = " ".join(a)
    assert rouge_n(text, text, 1).f1 == pytest.approx(1.0)


def test_casing_normalized_but_punctuation_counts():
    assert rouge_n("The CAT", "the cat", 1).f1 == pytest.approx(1.0)
    # a trailing period is split off and scored as its own unigram
    got = rouge_n("the cat .", "the cat", 1)
    assert got.precision == pytest.approx(2.0 / 3.0)
    assert got.recall == pytest.approx(1.0)


# ---------------------------------------------------------------------------
# Soft similarity


def test_identical_texts_have_unit_similarity(embedder):
    got = soft_similarity_f1("fever and chills", "fever and chills", embedder)
    assert got.precision == pytest.approx(1.0, abs=1e-12)
    assert got.recall == pytest.approx(1.0, abs=1e-12)
    assert got.f1 == pytest.approx(1.0, abs=1e-12)


def test_candidate_subset_gives_perfect_precision(embedder):
    got = soft_similarity_f1("fever chills", "fever chills nausea pain", embedder)
    assert got.precision == pytest.approx(1.0, abs=1e-12)
    assert got.recall < 1.0
    assert got.recall <= got.precision


def test_empty_similarity_is_zero(embedder):
    assert soft_similarity_f1("", "fever", embedder) == pytest.approx(
        soft_similarity_f1("fever", "", embedder)
    )
    assert soft_similarity_f1("", "", embedder).f1 == 0.0


def test_similarity_matches_hand_rolled_greedy_matching(embedder):
    cand, ref = "fever pain", "pain nausea fever"
    c = embedder.vectors(metric_tokens(cand)).astype(np.float64)
    r = embedder.vectors(metric_tokens(ref)).astype(np.float64)
    c = c / np.linalg.norm(c, axis=1, keepdims=True)
    r = r / np.linalg.norm(r, axis=1, keepdims=True)
    sims = c @ r.T
    p = sims.max(axis=1).mean()
    rcl = sims.max(axis=0).mean()
    got = soft_similarity_f1(cand, ref, embedder)
    assert got.precision == pytest.approx(p, abs=1e-12)
    assert got.recall == pytest.approx(rcl, abs=1e-12)
    assert got.f1 == pytest.approx(2 * p * rcl / (p + rcl), abs=1e-12)
    assert -1.0 <= got.f1 <= 1.0


# ---------------------------------------------------------------------------
# Aggregates


def test_accuracy_counts_matches():
    assert accuracy([1, 2, 3, 4], [1, 2, 0, 4]) == 0.75
    with pytest.raises(ValueError):
        accuracy([1], [1, 2])
    with pytest.raises(ValueError):
        accuracy([], [])


def test_aggregate_arithmetic(embedder):
    r1 = RougeScore(0.5, 0.5, 0.6)
    r2 = RougeScore(0.2, 0.2, 0.3)
    sim = soft_similarity_f1("a b", "a b", embedder)
    assert task_aggregate(r1, sim) == pytest.approx((0.6 + sim.f1) / 2)
    assert tuning_objective(r1, r2, sim) == pytest.approx((0.6 + 0.3 + sim.f1) / 3)


def test_score_summary_row(embedder):
    row = score_summary("the cat sat", "the cat", embedder)
    assert set(row) == {
        "rouge1_f1", "rouge2_f1", "similarity_f1", "task_aggregate",
        "tuning_objective",
    }
    assert row["rouge1_f1"] == pytest.approx(0.8, abs=1e-9)
    assert row["task_aggregate"] == pytest.approx(
        (row["rouge1_f1"] + row["similarity_f1"]) / 2
    )
    assert row["tuning_objective"] == pytest.approx(
        (row["rouge1_f1"] + row["rouge2_f1"] + row["similarity_f1"]) / 3
    )
