"""Logit averaging and medoid summary selection against brute force."""

import numpy as np
import pytest

from scribelab.corpus import SECTION_HEADERS
from scribelab.embedding import RandomProjectionEmbedder, text_vector
from scribelab.ensemble import (
    EnsembleSelection,
    average_logits,
    ensemble_summarize,
    post_ensemble_select,
    predict_header,
    summary_similarity,
)

_WORDS = ["fever", "cough", "pain", "nausea", "rash", "chills", "sweats", "ache"]


def _random_candidates(rng, n):
    # distinct token multisets only: mean-pooled vectors of permuted texts
    # coincide exactly, and exact ties are exercised by dedicated tests below
    out, seen = [], set()
    while len(out) < n:
        k = int(rng.integers(1, 6))
        words = [_WORDS[i] for i in rng.integers(0, len(_WORDS), size=k)]
        key = tuple(sorted(words))
        if key not in seen:
            seen.add(key)
            out.append(" ".join(words))
    return out


def _brute_force_medoid(candidates, embedder):
    """Recompute the winner with explicit pairwise loops."""
    vecs = [text_vector(embedder, c) for c in candidates]
    unit = []
    for v in vecs:
        norm = np.linalg.norm(v)
        unit.append(v / norm if norm else np.zeros_like(v))
    best_idx, best_total = 0, -np.inf
    for i in range(len(candidates)):
        total = sum(
            float(np.dot(unit[i], unit[j]))
            for j in range(len(candidates))
            if j != i
        )
        if total > best_total:
            best_idx, best_total = i, total
    return best_idx, best_total


# ---------------------------------------------------------------------------
# Logit averaging


def test_average_is_elementwise_mean():
    a = np.array([1.0, 2.0, 3.0], dtype=np.float32)
    b = np.array([3.0, 0.0, 3.0], dtype=np.float32)
    avg = average_logits([a, b])
    assert avg.dtype == np.float64
    np.testing.assert_allclose(avg, [2.0, 1.0, 3.0])


def test_average_validates_input():
    with pytest.raises(ValueError):
        average_logits([])
    with pytest.raises(ValueError):
        average_logits([np.zeros(3), np.zeros(4)])


def test_constant_shift_never_moves_the_argmax():
    rng = np.random.default_rng(0)
    for _ in range(100):
        k = int(rng.integers(2, 6))
        logits = [rng.normal(0, 3, size=20) for _ in range(k)]
        base = int(np.argmax(average_logits(logits)))
        shifts = rng.normal(0, 50, size=k)
        shifted = [l + s for l, s in zip(logits, shifts)]
        assert int(np.argmax(average_logits(shifted))) == base


def test_argmax_tie_breaks_to_lowest_index():
    # classes 2 and 7 tie exactly after averaging; 2 must win
    a = np.zeros(10)
    b = np.zeros(10)
    a[2], b[7] = 4.0, 4.0
    avg = average_logits([a, b])
    assert avg[2] == avg[7]
    assert int(np.argmax(avg)) == 2


def test_predict_header_runs_on_real_models(micro_classifier):
    from scribelab.tokenizer import RESERVED_TOKENS, Vocab

    vocab = Vocab(list(RESERVED_TOKENS) + [f"w{i:02d}" for i in range(15)], max_size=20)
    header = predict_header([(micro_classifier, vocab)], "w00 w01 w02")
    assert header in SECTION_HEADERS
    with pytest.raises(ValueError):
        predict_header([(micro_classifier, vocab)], "   ")
    with pytest.raises(ValueError):
        predict_header([], "w00")


# ---------------------------------------------------------------------------
# Medoid selection


def test_medoid_matches_brute_force_on_random_sets():
    rng = np.random.default_rng(7)
    embedder = RandomProjectionEmbedder(dim=48)
    for case in range(200):
        candidates = _random_candidates(rng, int(rng.integers(1, 7)))
        sel = post_ensemble_select(candidates, embedder)
        expect_idx, expect_total = _brute_force_medoid(candidates, embedder)
        assert sel.chosen_index == expect_idx, (case, candidates)
        assert sel.totals[sel.chosen_index] == pytest.approx(expect_total, abs=1e-9)
        assert sel.backend == "embedding"
        assert sel.matrix.shape == (len(candidates),) * 2


def test_six_candidate_committee_prefers_the_consensus():
    embedder = RandomProjectionEmbedder(dim=48)
    # two three-member families; the wording shared by four of six wins
    candidates = [
        "fever and cough noted",
        "fever and cough noted",
        "fever and cough observed",
        "rash on left arm",
        "fever and cough noted today",
        "rash on arm",
    ]
    sel = post_ensemble_select(candidates, embedder)
    assert sel.chosen_index in (0, 1)
    expect_idx, _ = _brute_force_medoid(candidates, embedder)
    assert sel.chosen_index == expect_idx


def test_identical_candidates_tie_break_to_first():
    sel = post_ensemble_select(["same text"] * 4, RandomProjectionEmbedder(dim=16))
    assert sel.chosen_index == 0
    np.testing.assert_allclose(sel.totals, 3.0, atol=1e-12)


def test_two_candidates_always_tie_to_first():
    # with two candidates both totals are the same single cross-similarity;
    # cancellation noise must not flip the winner to index 1
    emb = RandomProjectionEmbedder(dim=48)
    sel = post_ensemble_select(["cough cough", "pain fever cough nausea pain"], emb)
    assert sel.totals[0] == sel.totals[1]
    assert sel.chosen_index == 0


def test_single_candidate_is_chosen():
    sel = post_ensemble_select(["only one"], RandomProjectionEmbedder(dim=16))
    assert sel.chosen_index == 0
    assert sel.totals[0] == pytest.approx(0.0)


def test_empty_candidate_list_rejected():
    with pytest.raises(ValueError):
        post_ensemble_select([])


def test_tfidf_fallback_backend():
    candidates = [
        "fever and cough",
        "fever and cough",
        "completely unrelated words here",
    ]
    sel = post_ensemble_select(candidates)
    assert sel.backend == "tfidf"
    assert sel.chosen_index in (0, 1)
    json_form = sel.to_json()
    assert json_form["chosen_index"] == sel.chosen_index
    assert len(json_form["matrix"]) == 3


def test_summary_similarity_is_cosine_of_mean_pools():
    emb = RandomProjectionEmbedder(dim=32)
    a, b = "fever cough", "fever rash"
    expect = float(
        np.dot(text_vector(emb, a), text_vector(emb, b))
        / (np.linalg.norm(text_vector(emb, a)) * np.linalg.norm(text_vector(emb, b)))
    )
    assert summary_similarity(a, b, emb) == pytest.approx(expect, abs=1e-12)
    assert summary_similarity("", "fever", emb) == 0.0


def test_ensemble_summarize_returns_a_committee_member(micro_seq2seq):
    from scribelab.decode import BeamConfig
    from scribelab.tokenizer import RESERVED_TOKENS, Vocab

    vocab = Vocab(list(RESERVED_TOKENS) + [f"w{i:02d}" for i in range(15)], max_size=20)
    cfg = BeamConfig(num_beams=2, max_target_len=6, min_target_len=1)
    out = ensemble_summarize([(micro_seq2seq, vocab)] * 3, "w00 w01", cfg,
                             embedder=RandomProjectionEmbedder(dim=16))
    assert isinstance(out, str)
    with pytest.raises(ValueError):
        ensemble_summarize([], "w00", cfg)


def test_selection_dataclass_shape():
    sel = EnsembleSelection(["a"], np.ones((1, 1)), np.zeros(1), 0, "tfidf")
    assert sel.to_json()["backend"] == "tfidf"
