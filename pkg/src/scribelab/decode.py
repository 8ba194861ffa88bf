"""Beam-search decoding with the four tunable knobs.

Scoring convention: a finished hypothesis is ranked by
``cumulative_logprob / length ** length_penalty`` where length counts
generated tokens (EOS included, BOS excluded). Negative penalties only
make sense under this exponent-on-length form, so it is part of the
contract rather than an implementation detail.

Per step, every active beam is expanded over the whole vocabulary,
tokens that would recreate a seen n-gram are masked, EOS is masked while
the sequence is still shorter than ``min_target_len``, and the top
``num_beams`` candidates by cumulative log-prob survive. Finished
candidates (EOS, or ``max_target_len`` reached) move to a done pool
ranked by normalized score. ``early_stopping=True`` stops once the done
pool holds ``num_beams`` hypotheses; otherwise search continues until no
active beam's best achievable normalized score can beat the worst done
score. Greedy decoding is the ``num_beams=1`` degenerate case.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import no_grad
from .tokenizer import BOS_ID, EOS_ID, MIN_TARGET_LEN, PAD_ID, TARGET_BUDGET


@dataclass(frozen=True)
class BeamConfig:
    early_stopping: bool = True
    num_beams: int = 5
    no_repeat_ngram_size: int = 0
    length_penalty: float = 0.0
    max_target_len: int = TARGET_BUDGET
    min_target_len: int = MIN_TARGET_LEN

    def __post_init__(self):
        if self.num_beams < 1:
            raise ValueError(f"num_beams must be >= 1, got {self.num_beams}")
        if self.no_repeat_ngram_size < 0:
            raise ValueError("no_repeat_ngram_size must be >= 0 (0 disables it)")
        if self.max_target_len < 1:
            raise ValueError("max_target_len must be >= 1")
        if not 0 <= self.min_target_len <= self.max_target_len:
            raise ValueError(
                f"min_target_len={self.min_target_len} outside [0, max_target_len={self.max_target_len}]"
            )

    def to_dict(self) -> dict:
        return {
            "early_stopping": self.early_stopping,
            "num_beams": self.num_beams,
            "no_repeat_ngram_size": self.no_repeat_ngram_size,
            "length_penalty": self.length_penalty,
            "max_target_len": self.max_target_len,
            "min_target_len": self.min_target_len,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BeamConfig":
        return cls(**d)


def normalized_score(logprob_sum: float, length: int, penalty: float) -> float:
    if length < 1:
        raise ValueError("length must be >= 1")
    return logprob_sum / length ** penalty


@dataclass
class Hypothesis:
    """A scored (partial or finished) decode; ids exclude BOS."""

    ids: tuple[int, ...]
    cum_logprob: float
    score: float
    finished: bool
    # (n-1)-gram tail -> set of tokens seen after it; grown incrementally so
    # the per-step banned lookup is a single dict probe.
    ngram_index: dict = field(default_factory=dict, repr=False, compare=False)

    @staticmethod
    def rank_key(h: "Hypothesis"):
        return (-h.score, len(h.ids), h.ids)


def banned_tokens(prefix, n: int) -> set[int]:
    """Tokens whose appending would recreate an n-gram already in prefix."""
    if n < 1:
        raise ValueError("n must be >= 1")
    prefix = tuple(prefix)
    if len(prefix) < n:
        return set()
    index: dict[tuple, set[int]] = {}
    for i in range(len(prefix) - n + 1):
        index.setdefault(prefix[i : i + n - 1], set()).add(prefix[i + n - 1])
    return set(index.get(prefix[len(prefix) - n + 1 :], set()))


def _extend_index(parent: dict, ids: tuple[int, ...], n: int) -> dict:
    """Parent's n-gram index plus the n-gram completed by the newest token."""
    child = {k: set(v) for k, v in parent.items()}
    if n >= 1 and len(ids) >= n:
        tail = ids[len(ids) - n : len(ids) - 1]
        child.setdefault(tail, set()).add(ids[-1])
    return child


def _best_possible(cum: float, gen_len: int, cfg: BeamConfig) -> float:
    """Upper bound on any future normalized score of an active beam."""
    lo = max(gen_len + 1, cfg.min_target_len, 1)
    hi = cfg.max_target_len
    if lo > hi:
        lo = hi
    # cum <= 0, and cum/l^p is monotone in l^p, so the extremes suffice.
    return max(
        normalized_score(cum, lo, cfg.length_penalty),
        normalized_score(cum, hi, cfg.length_penalty),
    )


def beam_search(model, src_ids, cfg: BeamConfig, pad_id: int = PAD_ID,
                bos_id: int = BOS_ID, eos_id: int = EOS_ID) -> list[Hypothesis]:
    """Decode one source sequence; returns the done pool, best first."""
    src = np.asarray(src_ids, dtype=np.int64)
    if src.ndim != 1 or src.size == 0:
        raise ValueError("src must be a non-empty 1-D id sequence")
    with no_grad():
        memory, src_mask = model.encode(src[None, :], pad_id)

    n = cfg.no_repeat_ngram_size
    active: list[Hypothesis] = [Hypothesis((), 0.0, 0.0, False)]
    done: list[Hypothesis] = []

    while active:
        if cfg.early_stopping and len(done) >= cfg.num_beams:
            break
        if not cfg.early_stopping and done:
            worst_done = min(h.score for h in done)
            if all(
                _best_possible(h.cum_logprob, len(h.ids), cfg) <= worst_done
                for h in active
            ):
                break

        prefixes = np.array(
            [(bos_id,) + h.ids for h in active], dtype=np.int64
        )
        logprobs = model.next_logprobs(memory, src_mask, prefixes).astype(np.float64)
        vocab = logprobs.shape[1]
        scores = np.asarray([h.cum_logprob for h in active])[:, None] + logprobs

        for i, h in enumerate(active):
            if n >= 1:
                tail = h.ids[max(len(h.ids) - (n - 1), 0) :] if n > 1 else ()
                for t in h.ngram_index.get(tail, ()):
                    scores[i, t] = -np.inf
            if len(h.ids) + 1 < cfg.min_target_len:
                scores[i, eos_id] = -np.inf

        flat = scores.ravel()
        order = np.argsort(-flat, kind="stable")
        survivors: list[Hypothesis] = []
        for flat_idx in order:
            if len(survivors) == cfg.num_beams:
                break
            if not np.isfinite(flat[flat_idx]):
                break  # -inf sorts last; nothing usable remains
            beam_i, tok = divmod(int(flat_idx), vocab)
            parent = active[beam_i]
            ids = parent.ids + (int(tok),)
            cum = float(flat[flat_idx])
            finished = tok == eos_id or len(ids) >= cfg.max_target_len
            hyp = Hypothesis(
                ids, cum, normalized_score(cum, len(ids), cfg.length_penalty),
                finished,
                ngram_index=_extend_index(parent.ngram_index, ids, n) if n >= 1 else {},
            )
            survivors.append(hyp)

        active = []
        for hyp in survivors:
            (done if hyp.finished else active).append(hyp)

    if not done:
        raise RuntimeError("beam search produced no finished hypotheses")
    return sorted(done, key=Hypothesis.rank_key)


def greedy_decode(model, src_ids, max_target_len: int = TARGET_BUDGET,
                  min_target_len: int = MIN_TARGET_LEN) -> Hypothesis:
    cfg = BeamConfig(
        early_stopping=True, num_beams=1, no_repeat_ngram_size=0,
        length_penalty=0.0, max_target_len=max_target_len,
        min_target_len=min_target_len,
    )
    return beam_search(model, src_ids, cfg)[0]
