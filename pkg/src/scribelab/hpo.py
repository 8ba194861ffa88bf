"""Tree-structured Parzen Estimator over mixed search spaces.

The sampler follows the classic recipe: before ``n_startup_trials``
complete trials exist, sample uniformly; afterwards split history into a
good set (top ``ceil(gamma_fraction * n)`` by objective, maximizing) and
a bad set, fit per-dimension densities to each — Gaussian kernel
mixtures for numeric dimensions (Scott's-rule bandwidth floored at 1% of
the range; integers treated as continuous, then rounded half-away-from-
zero and clamped), Laplace-smoothed frequencies for categoricals — draw
``n_candidates`` joint samples from the good density and return the one
maximizing the joint density ratio good/bad.

The study loop is sequential, deterministic under a fixed seed, records
failed objective evaluations without aborting, and appends JSON lines to
a resumable trial log whose header records the sampler's assumptions.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from .decode import BeamConfig, beam_search
from .errors import StudyError
from .metrics import rouge_n, soft_similarity_f1, tuning_objective
from .tokenizer import MIN_TARGET_LEN, decode as decode_ids


# ---------------------------------------------------------------------------
# Search space


@dataclass(frozen=True)
class Categorical:
    name: str
    choices: tuple

    def __post_init__(self):
        if len(self.choices) < 1:
            raise ValueError(f"{self.name}: need at least one choice")
        object.__setattr__(self, "choices", tuple(self.choices))


@dataclass(frozen=True)
class IntDim:
    name: str
    low: int
    high: int  # inclusive

    def __post_init__(self):
        if self.low > self.high:
            raise ValueError(f"{self.name}: low {self.low} > high {self.high}")


@dataclass(frozen=True)
class FloatDim:
    name: str
    low: float
    high: float

    def __post_init__(self):
        if not self.low < self.high:
            raise ValueError(f"{self.name}: low {self.low} >= high {self.high}")


Dimension = Categorical | IntDim | FloatDim


@dataclass(frozen=True)
class SearchSpace:
    dimensions: tuple[Dimension, ...]

    def __post_init__(self):
        if not self.dimensions:
            raise ValueError("search space must have at least one dimension")
        names = [d.name for d in self.dimensions]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate dimension names in {names}")
        object.__setattr__(self, "dimensions", tuple(self.dimensions))

    def contains(self, params: dict) -> bool:
        for dim in self.dimensions:
            v = params[dim.name]
            if isinstance(dim, Categorical):
                if v not in dim.choices:
                    return False
            elif isinstance(dim, IntDim):
                if not (isinstance(v, (int, np.integer)) and dim.low <= v <= dim.high):
                    return False
            else:
                if not dim.low <= v <= dim.high:
                    return False
        return True


def decoding_search_space() -> SearchSpace:
    """The four beam-search knobs and their default tuning ranges."""
    return SearchSpace(
        (
            Categorical("early_stopping", (True, False)),
            IntDim("num_beams", 5, 15),
            IntDim("no_repeat_ngram_size", 5, 15),
            FloatDim("length_penalty", -2.0, 2.0),
        )
    )


# ---------------------------------------------------------------------------
# Trials


@dataclass(frozen=True)
class TrialRecord:
    trial: int
    params: dict
    objective: float | None
    status: str  # "complete" | "failed"

    def to_json(self) -> dict:
        return {
            "trial": self.trial,
            "params": self.params,
            "objective": self.objective,
            "status": self.status,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "TrialRecord":
        return cls(
            trial=int(obj["trial"]),
            params=dict(obj["params"]),
            objective=None if obj["objective"] is None else float(obj["objective"]),
            status=str(obj["status"]),
        )


@dataclass(frozen=True)
class TpeConfig:
    n_startup_trials: int = 10
    gamma_fraction: float = 0.25
    n_candidates: int = 24
    kde_bandwidth_rule: str = "scott"
    seed: int = 0

    def __post_init__(self):
        if self.n_startup_trials < 1:
            raise ValueError("n_startup_trials must be >= 1")
        if not 0.0 < self.gamma_fraction < 1.0:
            raise ValueError("gamma_fraction must be in (0, 1)")
        if self.n_candidates < 1:
            raise ValueError("n_candidates must be >= 1")
        if self.kde_bandwidth_rule != "scott":
            raise ValueError(f"unknown bandwidth rule {self.kde_bandwidth_rule!r}")

    def to_json(self) -> dict:
        return {
            "n_startup_trials": self.n_startup_trials,
            "gamma_fraction": self.gamma_fraction,
            "n_candidates": self.n_candidates,
            "kde_bandwidth_rule": self.kde_bandwidth_rule,
            "seed": self.seed,
        }


# ---------------------------------------------------------------------------
# Sampling


def _uniform_sample(space: SearchSpace, rng: np.random.Generator) -> dict:
    params = {}
    for dim in space.dimensions:
        if isinstance(dim, Categorical):
            params[dim.name] = dim.choices[int(rng.integers(len(dim.choices)))]
        elif isinstance(dim, IntDim):
            params[dim.name] = int(rng.integers(dim.low, dim.high + 1))
        else:
            params[dim.name] = float(rng.uniform(dim.low, dim.high))
    return params


def split_history(complete: list[TrialRecord], gamma_fraction: float):
    """Top ceil(gamma*n) by objective (desc) vs the rest; stable on ties."""
    ordered = sorted(
        complete, key=lambda t: (-t.objective, t.trial)
    )
    n_good = math.ceil(gamma_fraction * len(ordered))
    return ordered[:n_good], ordered[n_good:]


def _round_half_away(x: float) -> int:
    return int(math.floor(x + 0.5)) if x >= 0 else int(math.ceil(x - 0.5))


def _bandwidth(values: np.ndarray, low: float, high: float) -> float:
    # The floor shrinks as observations accumulate but never lets a
    # cluster of identical values collapse the kernel to a needle; a
    # degenerate "good" density would otherwise win the ratio argmax
    # forever and the sampler could not escape an early incumbent.
    floor = (high - low) / min(100.0, float(values.size) + 1.0)
    if values.size < 2:
        return floor
    sigma = float(values.std(ddof=1))
    return max(sigma * values.size ** (-0.2), floor)


class _NumericKde:
    """Parzen estimator: one Gaussian per observation plus a uniform prior
    component over the bounds, weighted as a single extra pseudo-observation.
    The prior is what keeps the sampler exploring once the observed values
    cluster; without it the estimator can paint itself into a corner and
    lose to plain random search."""

    def __init__(self, values: np.ndarray, low: float, high: float):
        self.values = np.asarray(values, dtype=np.float64)
        self.bw = _bandwidth(self.values, low, high)
        self.low, self.high = low, high
        self._prior_prob = 1.0 / (self.values.size + 1)

    def sample(self, rng: np.random.Generator) -> float:
        if rng.uniform() < self._prior_prob:
            return float(rng.uniform(self.low, self.high))
        center = self.values[int(rng.integers(self.values.size))]
        return float(np.clip(center + self.bw * rng.standard_normal(), self.low, self.high))

    def logpdf(self, x: float) -> float:
        z = (x - self.values) / self.bw
        kernels = (
            logsumexp(-0.5 * z * z)
            - math.log(self.values.size)
            - math.log(self.bw * math.sqrt(2.0 * math.pi))
        )
        prior = -math.log(self.high - self.low)
        return float(
            np.logaddexp(
                math.log1p(-self._prior_prob) + kernels,
                math.log(self._prior_prob) + prior,
            )
        )


class _CategoricalPmf:
    def __init__(self, values: list, choices: tuple, smoothing: float = 1.0):
        counts = np.array([sum(v == c for v in values) for c in choices], dtype=np.float64)
        weights = counts + smoothing
        self.choices = choices
        self.probs = weights / weights.sum()

    def sample(self, rng: np.random.Generator):
        idx = int(rng.choice(len(self.choices), p=self.probs))
        return self.choices[idx]

    def logpdf(self, value) -> float:
        return float(np.log(self.probs[self.choices.index(value)]))


def _fit_density(dim: Dimension, records: list[TrialRecord]):
    values = [t.params[dim.name] for t in records]
    if isinstance(dim, Categorical):
        return _CategoricalPmf(values, dim.choices)
    lo, hi = float(dim.low), float(dim.high)
    return _NumericKde(np.asarray(values, dtype=np.float64), lo, hi)


def suggest(history: list[TrialRecord], space: SearchSpace, cfg: TpeConfig,
            rng: np.random.Generator) -> dict:
    complete = [t for t in history if t.status == "complete"]
    if len(complete) < cfg.n_startup_trials:
        return _uniform_sample(space, rng)
    good, bad = split_history(complete, cfg.gamma_fraction)
    if not bad:
        return _uniform_sample(space, rng)

    good_densities = [_fit_density(dim, good) for dim in space.dimensions]
    bad_densities = [_fit_density(dim, bad) for dim in space.dimensions]

    best_params = None
    best_ratio = -math.inf
    for _ in range(cfg.n_candidates):
        params = {}
        ratio = 0.0
        for dim, g, b in zip(space.dimensions, good_densities, bad_densities):
            value = g.sample(rng)
            if isinstance(dim, IntDim):
                value = max(dim.low, min(dim.high, _round_half_away(value)))
            params[dim.name] = value
            ratio += g.logpdf(value) - b.logpdf(value)
        if ratio > best_ratio:
            best_ratio = ratio
            best_params = params
    return best_params


# ---------------------------------------------------------------------------
# Study loop


@dataclass
class StudyResult:
    best: TrialRecord
    history: list[TrialRecord] = field(default_factory=list)


def _log_header(space: SearchSpace, cfg: TpeConfig, n_trials: int) -> dict:
    dims = []
    for dim in space.dimensions:
        if isinstance(dim, Categorical):
            dims.append({"name": dim.name, "kind": "categorical",
                         "choices": list(dim.choices)})
        elif isinstance(dim, IntDim):
            dims.append({"name": dim.name, "kind": "int",
                         "low": dim.low, "high": dim.high})
        else:
            dims.append({"name": dim.name, "kind": "float",
                         "low": dim.low, "high": dim.high})
    return {
        "type": "header",
        "space": dims,
        "tpe": cfg.to_json(),
        "n_trials": n_trials,
        "note": "sampler internals (startup count, gamma, candidate count) are tunable assumptions, not part of the decoding contract",
    }


def run_study(objective, space: SearchSpace, n_trials: int, cfg: TpeConfig,
              initial_history: list[TrialRecord] | None = None,
              log_path: str | Path | None = None) -> StudyResult:
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    history: list[TrialRecord] = list(initial_history or [])
    rng = np.random.default_rng(cfg.seed)

    log_fh = None
    if log_path is not None:
        log_path = Path(log_path)
        log_path.parent.mkdir(parents=True, exist_ok=True)
        fresh = not log_path.exists() or log_path.stat().st_size == 0
        log_fh = open(log_path, "a", encoding="utf-8")
        if fresh:
            log_fh.write(json.dumps(_log_header(space, cfg, n_trials)) + "\n")

    try:
        start_index = len(history)
        for i in range(start_index, start_index + n_trials):
            params = suggest(history, space, cfg, rng)
            t0 = time.perf_counter()
            try:
                value = float(objective(params))
                record = TrialRecord(i, params, value, "complete")
            except Exception:
                record = TrialRecord(i, params, None, "failed")
            history.append(record)
            if log_fh is not None:
                row = record.to_json()
                row["wall_time_ms"] = int((time.perf_counter() - t0) * 1000)
                log_fh.write(json.dumps(row) + "\n")
                log_fh.flush()
    finally:
        if log_fh is not None:
            log_fh.close()

    complete = [t for t in history if t.status == "complete"]
    if not complete:
        raise StudyError("every trial failed; no objective value was obtained")
    best = max(complete, key=lambda t: (t.objective, -t.trial))
    return StudyResult(best=best, history=history)


def random_search(objective, space: SearchSpace, n_trials: int, seed: int,
                  log_path: str | Path | None = None) -> StudyResult:
    """Pure uniform-sampling baseline (the sampler never leaves startup)."""
    cfg = TpeConfig(n_startup_trials=n_trials + 1, seed=seed)
    return run_study(objective, space, n_trials, cfg, log_path=log_path)


def load_trial_log(path: str | Path) -> list[TrialRecord]:
    records = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        obj = json.loads(line)
        if obj.get("type") == "header":
            continue
        records.append(TrialRecord.from_json(obj))
    return records


# ---------------------------------------------------------------------------
# Decoding-knob tuning


@dataclass
class TuningOutcome:
    config: BeamConfig
    study: StudyResult


def tune_decoding(models: list, examples: list[tuple[list[int], str]],
                  vocab, embedder, n_trials: int, cfg: TpeConfig,
                  space: SearchSpace | None = None,
                  max_target_len: int = 64,
                  min_target_len: int = MIN_TARGET_LEN,
                  log_path: str | Path | None = None,
                  initial_history: list[TrialRecord] | None = None) -> TuningOutcome:
    """Search the four decoding knobs to maximize the mean tuning objective
    of every (model, validation example) decode."""
    if not models:
        raise ValueError("need at least one model")
    if not examples:
        raise ValueError("need at least one validation example")
    space = space or decoding_search_space()

    def objective(params: dict) -> float:
        beam_cfg = BeamConfig(
            early_stopping=bool(params["early_stopping"]),
            num_beams=int(params["num_beams"]),
            no_repeat_ngram_size=int(params["no_repeat_ngram_size"]),
            length_penalty=float(params["length_penalty"]),
            max_target_len=max_target_len,
            min_target_len=min_target_len,
        )
        scores = []
        for model in models:
            for src_ids, reference in examples:
                best = beam_search(model, src_ids, beam_cfg)[0]
                text = decode_ids(vocab, list(best.ids))
                scores.append(
                    tuning_objective(
                        rouge_n(text, reference, 1),
                        rouge_n(text, reference, 2),
                        soft_similarity_f1(text, reference, embedder),
                    )
                )
        return float(np.mean(scores))

    study = run_study(objective, space, n_trials, cfg,
                      initial_history=initial_history, log_path=log_path)
    best = study.best.params
    config = BeamConfig(
        early_stopping=bool(best["early_stopping"]),
        num_beams=int(best["num_beams"]),
        no_repeat_ngram_size=int(best["no_repeat_ngram_size"]),
        length_penalty=float(best["length_penalty"]),
        max_target_len=max_target_len,
        min_target_len=min_target_len,
    )
    return TuningOutcome(config=config, study=study)
