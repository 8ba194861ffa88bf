"""TOML run configuration.

One file drives the whole pipeline. Every hyperparameter that the models,
trainer, tuner, and decoder accept has a config key; the shipped
``configs/full_scale.toml`` carries realistic full-scale values, while
``configs/desk.toml`` holds the small settings the test suite runs.
All randomness fans out from ``run.root_seed`` via stage labels.

Unknown keys are rejected loudly — silent typos in experiment configs
waste more time than strictness costs.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import UsageError
from .tokenizer import (
    CLASSIFIER_BUDGET,
    MIN_TARGET_LEN,
    SOURCE_BUDGET,
    TARGET_BUDGET,
)


def _from_table(cls, table: dict, where: str):
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(table) - known)
    if unknown:
        raise UsageError(f"unknown config key(s) in [{where}]: {', '.join(unknown)}")
    try:
        return cls(**table)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid [{where}] section: {exc}") from exc


@dataclass(frozen=True)
class RunSection:
    root_seed: int = 7
    output_dir: str = "runs/desk"


@dataclass(frozen=True)
class DataSection:
    source: str = "synthetic"      # "synthetic" | "file"
    path: str = ""
    format: str = "jsonl"
    synthetic_n: int = 200
    k_folds: int = 3
    vocab_size: int = 600

    def __post_init__(self):
        if self.source not in ("synthetic", "file"):
            raise ValueError(f"data.source must be 'synthetic' or 'file', got {self.source!r}")
        if self.source == "file" and not self.path:
            raise ValueError("data.source = 'file' requires data.path")
        if self.k_folds < 2:
            raise ValueError("data.k_folds must be >= 2")
        if self.synthetic_n < self.k_folds:
            raise ValueError("data.synthetic_n must be >= k_folds")


@dataclass(frozen=True)
class ArchSection:
    name: str = "compact"
    d_model: int = 64
    n_heads: int = 4
    n_encoder_layers: int = 2
    n_decoder_layers: int = 2
    d_ff: int = 128
    max_positions: int = 96
    dropout_p: float = 0.1


@dataclass(frozen=True)
class TrainSection:
    epochs: int = 30
    batch_size: int = 16
    learning_rate: float = 1e-3
    grad_accumulation_steps: int = 1
    patience: int = 10
    weight_decay: float = 0.01


@dataclass(frozen=True)
class LoraSection:
    r: int = 8
    alpha: float = 32.0
    dropout_p: float = 0.01
    target_projections: tuple = ("query", "value")

    def __post_init__(self):
        object.__setattr__(self, "target_projections", tuple(self.target_projections))


@dataclass(frozen=True)
class DecodeSection:
    """Token budgets plus the documented fallback decoding config used
    when no tuned configuration exists yet."""

    classifier_budget: int = CLASSIFIER_BUDGET
    source_budget: int = SOURCE_BUDGET
    target_budget: int = TARGET_BUDGET
    max_target_len: int = TARGET_BUDGET
    min_target_len: int = MIN_TARGET_LEN
    default_num_beams: int = 5
    default_no_repeat_ngram_size: int = 5
    default_length_penalty: float = 1.0
    default_early_stopping: bool = True


@dataclass(frozen=True)
class SpaceSection:
    """Bounds of the four-knob decoding search space."""

    num_beams_low: int = 5
    num_beams_high: int = 15
    no_repeat_ngram_low: int = 5
    no_repeat_ngram_high: int = 15
    length_penalty_low: float = -2.0
    length_penalty_high: float = 2.0


@dataclass(frozen=True)
class TuneSection:
    n_trials: int = 50
    n_examples: int = 8
    fold: int = 0
    arch: str = ""            # empty -> first summarizer variant
    n_startup_trials: int = 10
    gamma_fraction: float = 0.25
    n_candidates: int = 24
    space: SpaceSection = field(default_factory=SpaceSection)


@dataclass(frozen=True)
class PredictSection:
    composition: str = "run1"  # run1 | run2 | run3
    mode: str = "lora"
    n_examples: int = 16
    audit: bool = True

    def __post_init__(self):
        if self.composition not in ("run1", "run2", "run3"):
            raise ValueError(f"predict.composition must be run1/run2/run3, got {self.composition!r}")
        if self.mode not in ("lora", "full"):
            raise ValueError(f"predict.mode must be lora or full, got {self.mode!r}")


@dataclass(frozen=True)
class TaskModelSection:
    arch: ArchSection
    train: TrainSection
    lora: LoraSection


@dataclass(frozen=True)
class PipelineConfig:
    run: RunSection
    data: DataSection
    classifier: TaskModelSection
    summarizer_variants: tuple[TaskModelSection, ...]
    decode: DecodeSection
    tune: TuneSection
    predict: PredictSection
    config_path: str = ""

    @property
    def output_dir(self) -> Path:
        return Path(self.run.output_dir)

    def variant_named(self, name: str) -> TaskModelSection:
        for v in self.summarizer_variants:
            if v.arch.name == name:
                return v
        known = [v.arch.name for v in self.summarizer_variants]
        raise UsageError(f"unknown summarizer variant {name!r}; configured: {known}")


def _task_model(table: dict, where: str, default_arch_name: str) -> TaskModelSection:
    table = dict(table)
    arch_table = {k: v for k, v in table.items()
                  if k not in ("train", "lora")}
    arch_table.setdefault("name", default_arch_name)
    return TaskModelSection(
        arch=_from_table(ArchSection, arch_table, where),
        train=_from_table(TrainSection, table.get("train", {}), f"{where}.train"),
        lora=_from_table(LoraSection, table.get("lora", {}), f"{where}.lora"),
    )


def load_config(path: str | Path) -> PipelineConfig:
    path = Path(path)
    if not path.exists():
        raise UsageError(f"config file not found: {path}")
    try:
        raw = tomllib.loads(path.read_text(encoding="utf-8"))
    except tomllib.TOMLDecodeError as exc:
        raise UsageError(f"cannot parse {path}: {exc}") from exc

    known_top = {"run", "data", "classifier", "summarizer", "decode", "tune", "predict"}
    unknown = sorted(set(raw) - known_top)
    if unknown:
        raise UsageError(f"unknown top-level config section(s): {', '.join(unknown)}")
    for key in sorted(known_top & set(raw)):
        if not isinstance(raw[key], dict):
            hint = (
                " (repeated summarizer models go in [[summarizer.variants]])"
                if key == "summarizer"
                else ""
            )
            raise UsageError(
                f"config section [{key}] must be a table, not a"
                f" [[{key}]] array or bare value{hint}"
            )

    run = _from_table(RunSection, raw.get("run", {}), "run")
    data = _from_table(DataSection, raw.get("data", {}), "data")
    classifier = _task_model(raw.get("classifier", {}), "classifier", "classifier")

    summarizer_raw = raw.get("summarizer", {})
    variant_tables = summarizer_raw.get("variants", None)
    if not variant_tables:
        variant_tables = [{}]
    extra = sorted(set(summarizer_raw) - {"variants"})
    if extra:
        raise UsageError(
            f"unknown config key(s) in [summarizer]: {', '.join(extra)} "
            "(variants live in [[summarizer.variants]] tables)"
        )
    variants = tuple(
        _task_model(tbl, f"summarizer.variants[{i}]", f"variant{i}")
        for i, tbl in enumerate(variant_tables)
    )
    names = [v.arch.name for v in variants]
    if len(set(names)) != len(names):
        raise UsageError(f"summarizer variant names must be unique, got {names}")

    decode = _from_table(DecodeSection, raw.get("decode", {}), "decode")
    tune_table = dict(raw.get("tune", {}))
    space = _from_table(SpaceSection, tune_table.pop("space", {}), "tune.space")
    tune_table["space"] = space
    tune = _from_table(TuneSection, tune_table, "tune")
    predict = _from_table(PredictSection, raw.get("predict", {}), "predict")

    return PipelineConfig(
        run=run,
        data=data,
        classifier=classifier,
        summarizer_variants=variants,
        decode=decode,
        tune=tune,
        predict=predict,
        config_path=str(path),
    )
