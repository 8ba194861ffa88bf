"""Corpus-derived vocabulary and bounded-length token-id sequences.

Surface tokenization splits on whitespace and peels leading/trailing
punctuation into separate tokens; reserved markers such as ``<SEP>`` stay
atomic. Subword machinery is deliberately out of scope at desk scale.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

PAD_ID, UNK_ID, BOS_ID, EOS_ID, SEP_ID = 0, 1, 2, 3, 4

RESERVED_TOKENS: tuple[str, ...] = ("<PAD>", "<UNK>", "<BOS>", "<EOS>", "<SEP>")
_RESERVED_SET = set(RESERVED_TOKENS)
N_RESERVED = len(RESERVED_TOKENS)

# Default token budgets: 300 for the classifier input, 512/400 for the
# summarizer source/target, and a floor of 8 generated tokens.
CLASSIFIER_BUDGET = 300
SOURCE_BUDGET = 512
TARGET_BUDGET = 400
MIN_TARGET_LEN = 8

_PUNCT = set(".,;:!?()[]{}\"'`”“‘’<>-/")


def surface_tokens(text: str) -> list[str]:
    """Split text into surface tokens (whitespace, then edge punctuation)."""
    out: list[str] = []
    for chunk in text.split():
        if chunk in _RESERVED_SET:
            out.append(chunk)
            continue
        prefix: list[str] = []
        suffix: list[str] = []
        while chunk and chunk[0] in _PUNCT:
            prefix.append(chunk[0])
            chunk = chunk[1:]
        while chunk and chunk[-1] in _PUNCT:
            suffix.append(chunk[-1])
            chunk = chunk[:-1]
        out.extend(prefix)
        if chunk:
            out.append(chunk)
        out.extend(reversed(suffix))
    return out


@dataclass
class Vocab:
    """Immutable token/id mapping with fixed reserved ids 0..4."""

    tokens: list[str]  # full ordered list, reserved tokens first
    max_size: int

    def __post_init__(self):
        if self.tokens[:N_RESERVED] != list(RESERVED_TOKENS):
            raise ValueError("vocab must start with the reserved tokens")
        self._ids = {tok: i for i, tok in enumerate(self.tokens)}
        if len(self._ids) != len(self.tokens):
            raise ValueError("vocab tokens must be unique")

    def __len__(self) -> int:
        return len(self.tokens)

    def id_of(self, token: str) -> int:
        return self._ids.get(token, UNK_ID)

    def token_of(self, idx: int) -> str:
        if not 0 <= idx < len(self.tokens):
            raise ValueError(f"token id {idx} out of range for vocab of size {len(self.tokens)}")
        return self.tokens[idx]

    def to_json(self) -> dict:
        return {
            "tokens": self.tokens,
            "max_size": self.max_size,
            "reserved": {tok: i for i, tok in enumerate(RESERVED_TOKENS)},
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Vocab":
        return cls(tokens=list(obj["tokens"]), max_size=int(obj["max_size"]))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json()) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocab":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass
class TokenSeq:
    ids: list[int]
    truncated: bool = False

    def __len__(self) -> int:
        return len(self.ids)


def build_vocab(corpus: list[str], max_size: int) -> Vocab:
    """Build a vocabulary of the most frequent surface tokens.

    Ordering is frequency-then-lexicographic, after the five reserved ids.
    """
    if not corpus:
        raise ValueError("corpus must be non-empty")
    if max_size < N_RESERVED + 1:
        raise ValueError(f"max_size must be >= {N_RESERVED + 1} to fit reserved tokens")
    counts: Counter[str] = Counter()
    for text in corpus:
        counts.update(tok for tok in surface_tokens(text) if tok not in _RESERVED_SET)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    learned = [tok for tok, _ in ranked[: max_size - N_RESERVED]]
    return Vocab(tokens=list(RESERVED_TOKENS) + learned, max_size=max_size)


def encode(v: Vocab, text: str, budget: int, add_bos_eos: bool = False) -> TokenSeq:
    """Encode text to ids, truncating from the right to the budget.

    Unknown tokens map to UNK. With ``add_bos_eos``, BOS/EOS wrap the
    sequence and EOS survives truncation as the last id.
    """
    if budget < 1:
        raise ValueError(f"budget must be >= 1, got {budget}")
    if add_bos_eos and budget < 2:
        raise ValueError("budget must be >= 2 when adding BOS/EOS")
    ids = [v.id_of(tok) for tok in surface_tokens(text)]
    if add_bos_eos:
        ids = [BOS_ID] + ids + [EOS_ID]
    if len(ids) > budget:
        if add_bos_eos:
            ids = ids[: budget - 1] + [EOS_ID]
        else:
            ids = ids[:budget]
        return TokenSeq(ids=ids, truncated=True)
    return TokenSeq(ids=ids, truncated=False)


def decode(v: Vocab, ids: list[int]) -> str:
    """Render ids back to text.

    PAD/BOS/EOS are dropped; ``<UNK>`` and ``<SEP>`` keep their surface
    forms so in-vocab untruncated text round-trips (modulo single-space
    joining).
    """
    words = []
    for i in ids:
        tok = v.token_of(int(i))
        if i in (PAD_ID, BOS_ID, EOS_ID):
            continue
        words.append(tok)
    return " ".join(words)
