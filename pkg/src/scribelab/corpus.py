"""Corpus handling: the 20-class section-header taxonomy, labeled triplets,
preprocessing, stratified fold splitting, and a synthetic corpus generator
for desk-scale runs.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataValidationError

logger = logging.getLogger(__name__)

SEP_MARKER = "<SEP>"

# Canonical section headers, row for row: (code, description).
_TAXONOMY: tuple[tuple[str, str], ...] = (
    ("FAM/SOCHX", "FAMILY HISTORY/SOCIAL HISTORY"),
    ("GENHX", "HISTORY OF PRESENT ILLNESS"),
    ("PASTMEDICALHX", "PAST MEDICAL HISTORY"),
    ("CC", "CHIEF COMPLAINT"),
    ("PASTSURGICAL", "PAST SURGICAL HISTORY"),
    ("ALLERGY", "ALLERGY"),
    ("ROS", "REVIEW OF SYSTEMS"),
    ("MEDICATIONS", "MEDICATIONS"),
    ("ASSESSMENT", "ASSESSMENT"),
    ("EXAM", "EXAM"),
    ("DIAGNOSIS", "DIAGNOSIS"),
    ("DISPOSITION", "DISPOSITION"),
    ("PLAN", "PLAN"),
    ("EDCOURSE", "EMERGENCY DEPARTMENT COURSE"),
    ("IMMUNIZATIONS", "IMMUNIZATIONS"),
    ("IMAGING", "IMAGING"),
    ("GYNHX", "GYNECOLOGIC HISTORY"),
    ("PROCEDURES", "PROCEDURES"),
    ("OTHER_HISTORY", "OTHER_HISTORY"),
    ("LABS", "LABS"),
)


@dataclass(frozen=True)
class SectionHeader:
    """One of the 20 canonical clinical-note section labels."""

    code: str
    description: str
    index: int

    def __str__(self) -> str:
        return self.code


SECTION_HEADERS: tuple[SectionHeader, ...] = tuple(
    SectionHeader(code, desc, i) for i, (code, desc) in enumerate(_TAXONOMY)
)
_BY_CODE: dict[str, SectionHeader] = {h.code: h for h in SECTION_HEADERS}

N_CLASSES = len(SECTION_HEADERS)


def header_by_code(code: str) -> SectionHeader:
    try:
        return _BY_CODE[code]
    except KeyError:
        raise DataValidationError(
            f"unknown section header {code!r}; valid codes: "
            + ", ".join(h.code for h in SECTION_HEADERS)
        ) from None


def section_description(header: SectionHeader) -> str:
    """Canonical expansion text for a section header."""
    return header.description


@dataclass(frozen=True)
class Triplet:
    """One labeled example: dialogue, section header, reference section text."""

    id: str
    dialogue: str
    header: SectionHeader
    section_text: str

    def validate(self) -> None:
        if not self.dialogue.strip():
            raise DataValidationError(f"example {self.id}: empty dialogue")
        if not self.section_text.strip():
            raise DataValidationError(f"example {self.id}: empty section_text")
        if self.header.code not in _BY_CODE:
            raise DataValidationError(f"example {self.id}: bad header {self.header.code!r}")


@dataclass(frozen=True)
class ProcessedExample:
    """A triplet after preprocessing, ready for tokenization.

    classifier_input is the cleaned dialogue; summarizer_input is the
    dialogue joined to the section description by a single SEP marker.
    No field contains a newline.
    """

    id: str
    classifier_input: str
    summarizer_input: str
    target_summary: str
    header: SectionHeader


def clean_text(text: str) -> str:
    # Newlines (and stray CRs/tabs) become single spaces; runs collapse.
    return " ".join(text.replace("\r", " ").replace("\t", " ").replace("\n", " ").split())


_clean = clean_text


def preprocess(t: Triplet) -> ProcessedExample:
    """Replace newlines with spaces and build both model inputs.

    The summarizer input is ``dialogue <SEP> section-description``; the
    target summary is the section text unchanged beyond newline cleanup.
    """
    dialogue = _clean(t.dialogue)
    return ProcessedExample(
        id=t.id,
        classifier_input=dialogue,
        summarizer_input=f"{dialogue} {SEP_MARKER} {section_description(t.header)}",
        target_summary=_clean(t.section_text),
        header=t.header,
    )


# ---------------------------------------------------------------------------
# Loading


_REQUIRED_FIELDS = ("dialogue", "section_header", "section_text")


def _record_to_triplet(rec: dict, lineno: int, fallback_id: str) -> Triplet:
    missing = [f for f in _REQUIRED_FIELDS if f not in rec or rec[f] is None]
    if missing:
        raise DataValidationError(f"line {lineno}: missing field(s) {', '.join(missing)}")
    header = header_by_code(str(rec["section_header"]))
    t = Triplet(
        id=str(rec.get("id", fallback_id)),
        dialogue=str(rec["dialogue"]),
        header=header,
        section_text=str(rec["section_text"]),
    )
    try:
        t.validate()
    except DataValidationError as exc:
        raise DataValidationError(f"line {lineno}: {exc}") from None
    return t


def load_dataset(path: str | Path, format: str = "jsonl") -> list[Triplet]:
    """Load <dialogue, section_header, section_text> triplets from disk.

    Records missing required fields or carrying an unknown header code are
    rejected with the offending line number. Ids default to the record's
    ordinal position when absent.
    """
    path = Path(path)
    if not path.exists():
        raise DataValidationError(f"dataset file not found: {path}")
    if format == "jsonl":
        triplets = _load_jsonl(path)
    elif format == "csv":
        triplets = _load_csv(path)
    else:
        raise ValueError(f"unsupported format {format!r}; expected 'jsonl' or 'csv'")
    if not triplets:
        warnings.warn(f"{path}: dataset is empty", stacklevel=2)
    seen: set[str] = set()
    for t in triplets:
        if t.id in seen:
            raise DataValidationError(f"duplicate example id {t.id!r}")
        seen.add(t.id)
    return triplets


def _load_jsonl(path: Path) -> list[Triplet]:
    out = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataValidationError(f"line {lineno}: invalid JSON ({exc.msg})") from None
            out.append(_record_to_triplet(rec, lineno, fallback_id=str(len(out))))
    return out


def _load_csv(path: Path) -> list[Triplet]:
    out = []
    with path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            return out
        for lineno, rec in enumerate(reader, start=2):  # header is line 1
            out.append(_record_to_triplet(rec, lineno, fallback_id=str(len(out))))
    return out


def save_dataset(triplets: list[Triplet], path: str | Path) -> None:
    """Write triplets as JSONL with the canonical field names."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for t in triplets:
            fh.write(
                json.dumps(
                    {
                        "id": t.id,
                        "dialogue": t.dialogue,
                        "section_header": t.header.code,
                        "section_text": t.section_text,
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )


# ---------------------------------------------------------------------------
# Fold splitting


@dataclass
class Fold:
    train_ids: list[str]
    val_ids: list[str]
    test_ids: list[str]


@dataclass
class FoldAssignment:
    k: int
    seed: int
    assignments: dict[str, int]  # example id -> fold index of its held-out part
    folds: list[Fold] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "k": self.k,
            "seed": self.seed,
            "assignments": self.assignments,
            "folds": [
                {"train_ids": f.train_ids, "val_ids": f.val_ids, "test_ids": f.test_ids}
                for f in self.folds
            ],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "FoldAssignment":
        return cls(
            k=int(obj["k"]),
            seed=int(obj["seed"]),
            assignments={str(k): int(v) for k, v in obj["assignments"].items()},
            folds=[
                Fold(list(f["train_ids"]), list(f["val_ids"]), list(f["test_ids"]))
                for f in obj["folds"]
            ],
        )


def make_folds(examples: list[Triplet], k: int, seed: int) -> FoldAssignment:
    """Stratified k-fold assignment with a val/test split inside each fold.

    Examples are grouped by header, shuffled per class, and dealt round-robin
    across folds with a position counter carried between classes, which keeps
    every fold within one example of n/k overall and balances each class as
    far as its count allows (classes with fewer than k members simply land
    round-robin). Each fold's held-out part is then split 50/50 into
    validation and test ids, stratified the same way. Deterministic given
    the seed.
    """
    n = len(examples)
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    if k > n:
        raise ValueError(f"k={k} exceeds corpus size {n}")
    if n < 2 * k:
        raise ValueError(f"need at least 2k={2 * k} examples for val/test splits, got {n}")

    rng = np.random.default_rng(seed)
    by_class: dict[int, list[str]] = {h.index: [] for h in SECTION_HEADERS}
    for t in examples:
        by_class[t.header.index].append(t.id)

    assignments: dict[str, int] = {}
    pos = 0
    for class_index in sorted(by_class):
        ids = by_class[class_index]
        order = rng.permutation(len(ids))
        for j in order:
            assignments[ids[j]] = pos % k
            pos += 1

    all_ids = [t.id for t in examples]
    folds: list[Fold] = []
    for f in range(k):
        held_out = [i for i in all_ids if assignments[i] == f]
        train_ids = [i for i in all_ids if assignments[i] != f]
        val_ids, test_ids = _split_val_test(held_out, examples, seed, f)
        folds.append(Fold(train_ids=train_ids, val_ids=val_ids, test_ids=test_ids))

    return FoldAssignment(k=k, seed=seed, assignments=assignments, folds=folds)


def _split_val_test(
    held_out: list[str], examples: list[Triplet], seed: int, fold: int
) -> tuple[list[str], list[str]]:
    # Alternate val/test within each class, carrying the toggle across
    # classes so the overall split stays within one example of 50/50.
    by_id = {t.id: t for t in examples}
    rng = np.random.default_rng((seed, fold))
    by_class: dict[int, list[str]] = {}
    for i in held_out:
        by_class.setdefault(by_id[i].header.index, []).append(i)
    val, test = [], []
    toggle = 0
    for class_index in sorted(by_class):
        ids = by_class[class_index]
        order = rng.permutation(len(ids))
        for j in order:
            (val if toggle == 0 else test).append(ids[j])
            toggle ^= 1
    return sorted(val), sorted(test)


def save_fold_manifest(fa: FoldAssignment, path: str | Path) -> None:
    Path(path).write_text(json.dumps(fa.to_json(), indent=2) + "\n", encoding="utf-8")


def load_fold_manifest(path: str | Path) -> FoldAssignment:
    return FoldAssignment.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


# ---------------------------------------------------------------------------
# Synthetic corpus generation
#
# Each class gets a distinct three-word token signature woven into the
# dialogue, and the section text is a deterministic template over the class
# signature plus two "finding" words copied from the dialogue. That makes
# classification trivially separable and summarization a learnable
# compressive transform at toy scale. Class frequencies are skewed so the
# two history sections dominate, echoing the long-tail the real data shows.

_CLASS_WEIGHTS = (
    0.20,  # FAM/SOCHX
    0.17,  # GENHX
    0.10,  # PASTMEDICALHX
    0.08,  # CC
    0.06,  # PASTSURGICAL
    0.05,  # ALLERGY
    0.05,  # ROS
    0.05,  # MEDICATIONS
    0.04,  # ASSESSMENT
    0.04,  # EXAM
    0.03,  # DIAGNOSIS
    0.02,  # DISPOSITION
    0.02,  # PLAN
    0.02,  # EDCOURSE
    0.015,  # IMMUNIZATIONS
    0.015,  # IMAGING
    0.01,  # GYNHX
    0.01,  # PROCEDURES
    0.01,  # OTHER_HISTORY
    0.01,  # LABS
)

_SYLLABLES = (
    "ba", "ce", "di", "fo", "gu", "ha", "ki", "lo", "me", "nu",
    "pa", "qui", "ro", "su", "ta", "vu", "wa", "xi", "ya", "zo",
)

_FINDINGS = (
    "pain", "fever", "cough", "rash", "swelling", "nausea", "fatigue",
    "dizziness", "headache", "cramping", "numbness", "itching", "bruising",
    "stiffness", "tingling", "weakness", "soreness", "burning", "pressure",
    "tenderness", "congestion", "wheezing", "palpitations", "chills",
    "drowsiness", "tremor", "blurring", "aching", "dryness", "hoarseness",
)

_DURATIONS = ("two", "three", "four", "five", "six", "seven", "eight", "nine")


def topic_words(header: SectionHeader) -> tuple[str, str, str]:
    """The class's fixed three-word dialogue signature (pseudo-words)."""
    words = []
    for j in range(3):
        digest = hashlib.sha256(f"topic:{header.code}:{j}".encode("utf-8")).digest()
        word = "".join(_SYLLABLES[digest[i] % len(_SYLLABLES)] for i in range(3))
        words.append(word + str(header.index))
    return tuple(words)


def _class_quota(n: int) -> list[int]:
    # Largest-remainder apportionment of the class weights to n examples.
    raw = [w * n for w in _CLASS_WEIGHTS]
    counts = [int(x) for x in raw]
    remainders = sorted(range(N_CLASSES), key=lambda i: (-(raw[i] - counts[i]), i))
    short = n - sum(counts)
    for i in remainders[:short]:
        counts[i] += 1
    return counts


def synthetic_target_text(header: SectionHeader, findings: tuple[str, str]) -> str:
    """The deterministic summary a dialogue compresses to."""
    t0, t1, _ = topic_words(header)
    return (
        f"{header.description.lower()} : patient reports {findings[0]} "
        f"and {findings[1]} . {t0} {t1} noted ."
    )


def generate_synthetic_corpus(
    n: int, seed: int, vocab_size: int = 600
) -> list[Triplet]:
    """Generate n learnable triplets, byte-identical for a given seed.

    ``vocab_size`` controls the size of the filler lexicon, which bounds how
    many distinct surface tokens the corpus can contain.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    fillers = [f"fil{_SYLLABLES[i % 20]}{i}" for i in range(max(vocab_size, 20))]

    labels: list[int] = []
    for class_index, count in enumerate(_class_quota(n)):
        labels.extend([class_index] * count)
    labels = [labels[i] for i in rng.permutation(n)]

    out: list[Triplet] = []
    for i, class_index in enumerate(labels):
        header = SECTION_HEADERS[class_index]
        t0, t1, t2 = topic_words(header)
        f0, f1 = (
            _FINDINGS[rng.integers(len(_FINDINGS))],
            _FINDINGS[rng.integers(len(_FINDINGS))],
        )
        duration = _DURATIONS[rng.integers(len(_DURATIONS))]
        extra = [fillers[rng.integers(len(fillers))] for _ in range(6)]
        dialogue = (
            f"Doctor: tell me about the {t0} and any {t1} today.\n"
            f"Patient: well {extra[0]} {extra[1]} I have {f0} and some {f1} "
            f"for {duration} weeks now.\n"
            f"Doctor: any {t2} or {extra[2]} {extra[3]} before?\n"
            f"Patient: mostly the {f0} {extra[4]} and {extra[5]} I think."
        )
        out.append(
            Triplet(
                id=f"syn-{i:05d}",
                dialogue=dialogue,
                header=header,
                section_text=synthetic_target_text(header, (f0, f1)),
            )
        )
    return out


def corpus_digest(triplets: list[Triplet]) -> str:
    """Content hash of a corpus, for manifests and determinism checks."""
    buf = io.StringIO()
    for t in triplets:
        buf.write(f"{t.id}\x1f{t.dialogue}\x1f{t.header.code}\x1f{t.section_text}\x1e")
    return hashlib.sha256(buf.getvalue().encode("utf-8")).hexdigest()
