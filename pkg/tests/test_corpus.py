"""Corpus layer: taxonomy, validation, preprocessing, folds, synthetic data."""

import json

import pytest

from scribelab.corpus import (
    N_CLASSES,
    SECTION_HEADERS,
    SEP_MARKER,
    FoldAssignment,
    Triplet,
    clean_text,
    corpus_digest,
    generate_synthetic_corpus,
    header_by_code,
    load_dataset,
    load_fold_manifest,
    make_folds,
    preprocess,
    save_dataset,
    save_fold_manifest,
    section_description,
    topic_words,
)
from scribelab.errors import DataValidationError


# ---------------------------------------------------------------------------
# Taxonomy


def test_taxonomy_has_twenty_unique_headers():
    assert N_CLASSES == 20
    codes = [h.code for h in SECTION_HEADERS]
    assert len(set(codes)) == 20
    assert [h.index for h in SECTION_HEADERS] == list(range(20))


def test_header_by_code_roundtrip_and_error():
    for h in SECTION_HEADERS:
        assert header_by_code(h.code) is h
    with pytest.raises(DataValidationError):
        header_by_code("NOT_A_SECTION")


def test_section_description_expands():
    assert section_description(header_by_code("CC")) == "CHIEF COMPLAINT"


# ---------------------------------------------------------------------------
# Cleaning and preprocessing


def test_clean_text_flattens_whitespace():
    assert clean_text("a\nb\r\n  c\td") == "a b c d"


def test_preprocess_builds_both_inputs():
    t = Triplet("x1", "Doctor: hi\nPatient: pain", header_by_code("CC"), "has pain")
    ex = preprocess(t)
    assert "\n" not in ex.classifier_input
    assert SEP_MARKER in ex.summarizer_input
    assert "CHIEF COMPLAINT".lower() in ex.summarizer_input.lower()
    assert ex.target_summary == "has pain"
    assert ex.header is t.header


def test_validate_rejects_blank_fields():
    good = header_by_code("CC")
    with pytest.raises(DataValidationError):
        Triplet("a", "  ", good, "text").validate()
    with pytest.raises(DataValidationError):
        Triplet("a", "dialogue", good, " \n").validate()


# ---------------------------------------------------------------------------
# Dataset files


def test_dataset_jsonl_roundtrip(tmp_path):
    triplets = generate_synthetic_corpus(12, seed=3)
    p = tmp_path / "data.jsonl"
    save_dataset(triplets, p)
    loaded = load_dataset(p)
    assert corpus_digest(loaded) == corpus_digest(triplets)


def test_load_dataset_rejects_unknown_header(tmp_path):
    p = tmp_path / "bad.jsonl"
    p.write_text(json.dumps({"id": "r1", "dialogue": "d", "header": "BOGUS",
                             "section_text": "s"}) + "\n")
    with pytest.raises(DataValidationError):
        load_dataset(p)


def test_load_dataset_rejects_unknown_format(tmp_path):
    p = tmp_path / "data.xml"
    p.write_text("<x/>")
    with pytest.raises(ValueError):
        load_dataset(p, format="xml")


# ---------------------------------------------------------------------------
# Synthetic corpus


def test_synthetic_corpus_is_deterministic():
    a = generate_synthetic_corpus(40, seed=9)
    b = generate_synthetic_corpus(40, seed=9)
    c = generate_synthetic_corpus(40, seed=10)
    assert corpus_digest(a) == corpus_digest(b)
    assert corpus_digest(a) != corpus_digest(c)


def test_synthetic_corpus_class_quota_largest_remainder():
    # Independent largest-remainder apportionment over the documented skew.
    n = 200
    triplets = generate_synthetic_corpus(n, seed=1)
    got = [0] * N_CLASSES
    for t in triplets:
        got[t.header.index] += 1

    weights = (0.20, 0.17, 0.10, 0.08, 0.06, 0.05, 0.05, 0.05, 0.04, 0.04,
               0.03, 0.02, 0.02, 0.02, 0.015, 0.015, 0.01, 0.01, 0.01, 0.01)
    raw = [w * n for w in weights]
    expect = [int(x) for x in raw]
    order = sorted(range(N_CLASSES), key=lambda i: (-(raw[i] - expect[i]), i))
    for i in order[: n - sum(expect)]:
        expect[i] += 1
    assert got == expect
    assert sum(got) == n


def test_synthetic_dialogue_carries_class_signature():
    for t in generate_synthetic_corpus(30, seed=2):
        t.validate()
        for w in topic_words(t.header):
            assert w in t.dialogue
        assert t.section_text.startswith(t.header.description.lower())


def test_topic_words_are_distinct_across_classes():
    seen = set()
    for h in SECTION_HEADERS:
        words = topic_words(h)
        assert len(set(words)) == 3
        seen.update(words)
    assert len(seen) == 3 * N_CLASSES


# ---------------------------------------------------------------------------
# Folds


def _fold_contract(triplets, k):
    fa = make_folds(triplets, k, seed=5)
    n = len(triplets)
    all_ids = {t.id for t in triplets}
    held_sizes = []
    union = set()
    for f in fa.folds:
        held = set(f.val_ids) | set(f.test_ids)
        held_sizes.append(len(held))
        # val/test split the held-out part without overlap
        assert set(f.val_ids) & set(f.test_ids) == set()
        assert len(f.val_ids) + len(f.test_ids) == len(held)
        # train is exactly the complement
        assert set(f.train_ids) == all_ids - held
        assert union & held == set()
        union |= held
    assert union == all_ids
    lo, hi = n // k, -(-n // k)
    for size in held_sizes:
        assert lo <= size <= hi
    return fa


@pytest.mark.parametrize("n,k", [(40, 2), (60, 3), (101, 4)])
def test_make_folds_contract(n, k):
    _fold_contract(generate_synthetic_corpus(n, seed=7), k)


def test_make_folds_deterministic_and_seed_sensitive():
    triplets = generate_synthetic_corpus(60, seed=7)
    a = make_folds(triplets, 3, seed=1)
    b = make_folds(triplets, 3, seed=1)
    c = make_folds(triplets, 3, seed=2)
    assert a.to_json() == b.to_json()
    assert a.to_json() != c.to_json()


def test_make_folds_argument_errors():
    triplets = generate_synthetic_corpus(10, seed=0)
    with pytest.raises(ValueError):
        make_folds(triplets, 1, seed=0)
    with pytest.raises(ValueError):
        make_folds(triplets, 11, seed=0)
    with pytest.raises(ValueError):
        make_folds(triplets, 6, seed=0)  # n < 2k


def test_fold_manifest_roundtrip(tmp_path):
    fa = make_folds(generate_synthetic_corpus(40, seed=4), 2, seed=3)
    p = tmp_path / "folds.json"
    save_fold_manifest(fa, p)
    loaded = load_fold_manifest(p)
    assert isinstance(loaded, FoldAssignment)
    assert loaded.to_json() == fa.to_json()
