"""Token-embedding sources for the similarity metrics.

Two interchangeable backends expose ``vectors(tokens) -> (n, d)``:

* RandomProjectionEmbedder — a frozen random projection; every distinct
  token gets a deterministic Gaussian vector derived from a hash of the
  token string, so no training artifact is needed.
* CheckpointEmbedder — rows of a trained model's token-embedding table,
  the desk-scale stand-in for a pretrained contextual encoder.
"""

from __future__ import annotations

import hashlib

import numpy as np

from .tokenizer import Vocab, surface_tokens


class RandomProjectionEmbedder:
    def __init__(self, dim: int = 256):
        if dim < 1:
            raise ValueError("dim must be >= 1")
        self.dim = dim
        self._cache: dict[str, np.ndarray] = {}

    def _vector(self, token: str) -> np.ndarray:
        vec = self._cache.get(token)
        if vec is None:
            digest = hashlib.sha256(f"tokvec:{token}".encode("utf-8")).digest()
            seed = int.from_bytes(digest[:8], "big")
            rng = np.random.default_rng(seed)
            vec = rng.standard_normal(self.dim) / np.sqrt(self.dim)
            self._cache[token] = vec
        return vec

    def vectors(self, tokens: list[str]) -> np.ndarray:
        if not tokens:
            return np.zeros((0, self.dim))
        return np.stack([self._vector(t) for t in tokens])


class CheckpointEmbedder:
    """Embeds tokens with a trained model's token-embedding table."""

    def __init__(self, model, vocab: Vocab):
        self._table = np.asarray(model.encoder.embed.tokens.data, dtype=np.float64)
        self._vocab = vocab
        self.dim = self._table.shape[1]

    def vectors(self, tokens: list[str]) -> np.ndarray:
        if not tokens:
            return np.zeros((0, self.dim))
        ids = [self._vocab.id_of(t) for t in tokens]
        return self._table[ids]


def metric_tokens(text: str) -> list[str]:
    """The shared tokenization for similarity scoring: lowercased surface."""
    return surface_tokens(text.lower())


def text_vector(embedder, text: str) -> np.ndarray:
    """Mean-pooled token vector for a text; zero vector when empty."""
    toks = metric_tokens(text)
    vecs = embedder.vectors(toks)
    if vecs.shape[0] == 0:
        return np.zeros(embedder.dim)
    return vecs.mean(axis=0)


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))
