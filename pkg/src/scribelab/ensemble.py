"""Combining per-fold models.

Classification: raw (pre-softmax) logits from every model are averaged
element-wise and the argmax class wins, lowest index on ties.

Summarization: each model decodes its own best hypothesis, then the
medoid of the candidate set is returned — the summary maximizing total
cosine similarity to all the others (self-similarity excluded, lowest
index on ties). Similarity comes from mean-pooled token embeddings, or
a TF-IDF cosine fallback when no embedder is supplied.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .corpus import SECTION_HEADERS, SectionHeader, clean_text
from .decode import BeamConfig, beam_search
from .embedding import cosine, metric_tokens, text_vector
from .model import forward_classify
from .tokenizer import (
    CLASSIFIER_BUDGET,
    PAD_ID,
    SOURCE_BUDGET,
    decode as decode_ids,
    encode,
)


@dataclass
class EnsembleSelection:
    candidates: list[str]
    matrix: np.ndarray          # (N, N) pairwise similarities
    totals: np.ndarray          # row sums excluding the diagonal
    chosen_index: int
    backend: str

    def to_json(self) -> dict:
        return {
            "candidates": self.candidates,
            "matrix": self.matrix.tolist(),
            "totals": self.totals.tolist(),
            "chosen_index": self.chosen_index,
            "backend": self.backend,
        }


def average_logits(per_model_logits: list[np.ndarray]) -> np.ndarray:
    if not per_model_logits:
        raise ValueError("need logits from at least one model")
    first = np.asarray(per_model_logits[0], dtype=np.float64)
    stacked = []
    for logits in per_model_logits:
        arr = np.asarray(logits, dtype=np.float64)
        if arr.shape != first.shape:
            raise ValueError(
                f"logit shape mismatch: {arr.shape} vs {first.shape}"
            )
        stacked.append(arr)
    return np.mean(stacked, axis=0)


def predict_header(checkpoints: list[tuple], dialogue: str) -> SectionHeader:
    """Average all models' logits for one dialogue and take the argmax."""
    if not checkpoints:
        raise ValueError("need at least one classifier checkpoint")
    if not dialogue.strip():
        raise ValueError("dialogue must be non-empty")
    text = clean_text(dialogue)
    per_model = []
    for model, vocab in checkpoints:
        seq = encode(vocab, text, CLASSIFIER_BUDGET, add_bos_eos=True)
        per_model.append(forward_classify(model, seq.ids, pad_id=PAD_ID))
    avg = average_logits(per_model)
    return SECTION_HEADERS[int(np.argmax(avg))]


def summary_similarity(a: str, b: str, embedder) -> float:
    """Cosine of mean-pooled token embeddings; empty text pools to zero."""
    return cosine(text_vector(embedder, a), text_vector(embedder, b))


def _tfidf_vectors(texts: list[str]) -> np.ndarray:
    """L2-normalized smoothed TF-IDF rows over the candidate set itself."""
    tokenized = [metric_tokens(t) for t in texts]
    vocab = sorted({tok for toks in tokenized for tok in toks})
    index = {tok: j for j, tok in enumerate(vocab)}
    n = len(texts)
    mat = np.zeros((n, max(len(vocab), 1)))
    df = Counter(tok for toks in tokenized for tok in set(toks))
    for i, toks in enumerate(tokenized):
        for tok, count in Counter(toks).items():
            idf = math.log((1 + n) / (1 + df[tok])) + 1.0
            mat[i, index[tok]] = count * idf
    norms = np.linalg.norm(mat, axis=1, keepdims=True)
    return np.divide(mat, norms, out=np.zeros_like(mat), where=norms != 0)


def post_ensemble_select(candidates: list[str], embedder=None) -> EnsembleSelection:
    """Pick the candidate closest to all the others (the medoid)."""
    if not candidates:
        raise ValueError("need at least one candidate summary")
    n = len(candidates)
    if embedder is not None:
        vecs = np.stack([text_vector(embedder, c) for c in candidates])
        norms = np.linalg.norm(vecs, axis=1, keepdims=True)
        unit = np.divide(vecs, norms, out=np.zeros_like(vecs), where=norms != 0)
        backend = "embedding"
    else:
        unit = _tfidf_vectors(candidates)
        backend = "tfidf"
    matrix = unit @ unit.T
    # BLAS output is not bitwise symmetric; symmetrize so duplicate
    # candidates produce identically-valued rows and the lowest-index rule
    # actually applies. Summing with a zeroed diagonal (rather than
    # subtracting it afterwards) avoids cancellation noise from
    # self-similarities that are one ULP away from 1.0.
    matrix = (matrix + matrix.T) / 2.0
    off_diagonal = matrix.copy()
    np.fill_diagonal(off_diagonal, 0.0)
    totals = off_diagonal.sum(axis=1)
    chosen = int(np.argmax(totals))  # argmax takes the lowest index on ties
    return EnsembleSelection(
        candidates=list(candidates),
        matrix=matrix,
        totals=totals,
        chosen_index=chosen,
        backend=backend,
    )


def ensemble_summarize(checkpoints: list[tuple], summarizer_input: str,
                       cfg: BeamConfig, embedder=None) -> str:
    """Each model decodes its top hypothesis; the medoid summary wins."""
    if not checkpoints:
        raise ValueError("need at least one seq2seq checkpoint")
    texts = []
    failures = []
    for model, vocab in checkpoints:
        src = encode(vocab, summarizer_input, SOURCE_BUDGET).ids
        try:
            best = beam_search(model, src, cfg)[0]
        except (RuntimeError, ValueError) as exc:
            failures.append(str(exc))
            continue
        texts.append(decode_ids(vocab, list(best.ids)))
    if not texts:
        raise RuntimeError(
            f"every model's decode failed ({len(failures)} failures: {failures[:2]})"
        )
    return texts[post_ensemble_select(texts, embedder).chosen_index]
