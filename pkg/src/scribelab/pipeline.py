"""Pipeline stages and the run manifest.

Stages: prepare (corpus, vocab, folds) → train (per task/mode/fold) →
tune (decoding knobs) → predict (ensembled outputs) → evaluate (metric
reports) → report (adapter-vs-full comparison table). Every stage hashes
its inputs; re-running a completed stage with identical inputs is a
no-op. All artifacts are deterministic bytes — timestamps live only in
the manifest.

Scale disclosures: models are tiny transformers trained from random
initialization (no pretrained base), the semantic-similarity metric is a
frozen random-projection stand-in, and one aggregate component of the
original three-part mean is not computed. Reports restate this.
"""

from __future__ import annotations

import hashlib
import json
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import corpus as corpus_mod
from .checkpoint import load_checkpoint, save_checkpoint
from .config import PipelineConfig, TaskModelSection
from .corpus import (
    FoldAssignment,
    ProcessedExample,
    generate_synthetic_corpus,
    header_by_code,
    load_dataset,
    load_fold_manifest,
    make_folds,
    preprocess,
    save_dataset,
    save_fold_manifest,
)
from .decode import BeamConfig, beam_search
from .embedding import CheckpointEmbedder, RandomProjectionEmbedder
from .ensemble import average_logits, post_ensemble_select
from .errors import DataValidationError, UsageError
from .hpo import (
    Categorical,
    FloatDim,
    IntDim,
    SearchSpace,
    TpeConfig,
    load_trial_log,
    tune_decoding,
)
from .metrics import accuracy, score_summary
from .model import (
    LoraSpec,
    ModelConfig,
    attach_lora,
    count_parameters,
    forward_classify,
    init_model,
)
from .seeding import derive_seed
from .tokenizer import PAD_ID, Vocab, build_vocab, decode as decode_ids, encode
from .training import TrainConfig, pad_batch, train_classifier, train_seq2seq

_METRIC_EMBEDDER_DIM = 256

DISCLOSURES = (
    "models are tiny randomly initialized transformers, not pretrained encoders",
    "similarity-F1 is a frozen random-projection greedy-matching stand-in for a learned metric",
    "the task aggregate averages two components; its third component is not computed",
)


# ---------------------------------------------------------------------------
# Workspace layout


class Workspace:
    def __init__(self, cfg: PipelineConfig):
        self.root = cfg.output_dir

    @property
    def manifest_path(self) -> Path:
        return self.root / "manifest.json"

    @property
    def raw_path(self) -> Path:
        return self.root / "corpus" / "raw.jsonl"

    @property
    def processed_path(self) -> Path:
        return self.root / "corpus" / "processed.jsonl"

    @property
    def vocab_path(self) -> Path:
        return self.root / "corpus" / "vocab.json"

    @property
    def folds_path(self) -> Path:
        return self.root / "corpus" / "folds.json"

    def checkpoint_path(self, task: str, mode: str, arch: str, fold: int) -> Path:
        return self.root / "checkpoints" / task / mode / arch / f"fold{fold}.ckpt"

    def curve_path(self, task: str, mode: str, arch: str, fold: int) -> Path:
        return self.root / "curves" / f"{task}-{mode}-{arch}-fold{fold}.jsonl"

    @property
    def trial_log_path(self) -> Path:
        return self.root / "tune" / "trials.jsonl"

    @property
    def tuned_config_path(self) -> Path:
        return self.root / "tune" / "best_config.json"

    def predictions_path(self, task: str, mode: str, composition: str) -> Path:
        name = f"{task}-{mode}" + (f"-{composition}" if task == "summarize" else "")
        return self.root / "predictions" / f"{name}.jsonl"

    def report_path(self, task: str, mode: str, composition: str, ext: str) -> Path:
        name = f"{task}-{mode}" + (f"-{composition}" if task == "summarize" else "")
        return self.root / "reports" / f"{name}.{ext}"

    @property
    def comparison_json(self) -> Path:
        return self.root / "reports" / "comparison.json"

    @property
    def comparison_txt(self) -> Path:
        return self.root / "reports" / "comparison.txt"

    def rel(self, path: Path) -> str:
        return str(path.relative_to(self.root))


# ---------------------------------------------------------------------------
# Manifest


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _hash_obj(obj) -> str:
    return hashlib.sha256(
        json.dumps(obj, sort_keys=True, default=str).encode("utf-8")
    ).hexdigest()


class RunManifest:
    """Stage ledger: inputs hash, produced artifacts, and their hashes."""

    def __init__(self, ws: Workspace, cfg: PipelineConfig):
        self.ws = ws
        self.path = ws.manifest_path
        if self.path.exists():
            self.data = json.loads(self.path.read_text(encoding="utf-8"))
        else:
            self.data = {
                "config_path": cfg.config_path,
                "root_seed": cfg.run.root_seed,
                "stages": {},
                "artifacts": {},
            }

    def is_fresh(self, stage: str, input_hash: str) -> bool:
        rec = self.data["stages"].get(stage)
        if not rec or rec.get("status") != "complete" or rec.get("input_hash") != input_hash:
            return False
        for rel, digest in rec.get("outputs", {}).items():
            p = self.ws.root / rel
            if not p.exists() or sha256_file(p) != digest:
                return False
        return True

    def record(self, stage: str, input_hash: str, output_paths: list[Path],
               started_at: str, extra: dict | None = None):
        outputs = {self.ws.rel(p): sha256_file(p) for p in output_paths}
        self.data["stages"][stage] = {
            "status": "complete",
            "input_hash": input_hash,
            "outputs": outputs,
            "started_at": started_at,
            "finished_at": _now(),
            **({"info": extra} if extra else {}),
        }
        self.data["artifacts"].update(outputs)
        self.save()

    def save(self):
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.write_text(
            json.dumps(self.data, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


# ---------------------------------------------------------------------------
# Shared loading helpers


def _require(path: Path, hint: str) -> Path:
    if not path.exists():
        raise UsageError(f"missing artifact {path}; run '{hint}' first")
    return path


def _load_processed(ws: Workspace) -> dict[str, ProcessedExample]:
    path = _require(ws.processed_path, "prepare")
    out: dict[str, ProcessedExample] = {}
    for line in path.read_text(encoding="utf-8").splitlines():
        row = json.loads(line)
        ex = ProcessedExample(
            id=row["id"],
            classifier_input=row["classifier_input"],
            summarizer_input=row["summarizer_input"],
            target_summary=row["target_summary"],
            header=header_by_code(row["header"]),
        )
        out[ex.id] = ex
    return out


def _load_prepared(cfg: PipelineConfig):
    ws = Workspace(cfg)
    processed = _load_processed(ws)
    vocab = Vocab.load(_require(ws.vocab_path, "prepare"))
    folds = load_fold_manifest(_require(ws.folds_path, "prepare"))
    return ws, processed, vocab, folds


def _effective_budget(budget: int, max_positions: int) -> int:
    return min(budget, max_positions)


def _classifier_arrays(cfg: PipelineConfig, processed, vocab, ids: list[str]):
    budget = _effective_budget(
        cfg.decode.classifier_budget, cfg.classifier.arch.max_positions
    )
    seqs = [encode(vocab, processed[i].classifier_input, budget, add_bos_eos=True).ids
            for i in ids]
    labels = np.array([processed[i].header.index for i in ids], dtype=np.int64)
    return pad_batch(seqs), labels


def _summarizer_arrays(cfg: PipelineConfig, variant: TaskModelSection, processed,
                       vocab, ids: list[str]):
    src_budget = _effective_budget(cfg.decode.source_budget, variant.arch.max_positions)
    tgt_budget = _effective_budget(cfg.decode.target_budget, variant.arch.max_positions)
    srcs, tgts = [], []
    for i in ids:
        srcs.append(encode(vocab, processed[i].summarizer_input, src_budget).ids)
        # encode() yields [BOS, tokens..., EOS]; training targets drop the
        # BOS (teacher forcing re-adds it on the input side).
        tgts.append(encode(vocab, processed[i].target_summary, tgt_budget,
                           add_bos_eos=True).ids[1:])
    return pad_batch(srcs), pad_batch(tgts)


def _model_config(arch, vocab_size: int, n_classes: int | None, seed: int) -> ModelConfig:
    return ModelConfig(
        vocab_size=vocab_size,
        d_model=arch.d_model,
        n_heads=arch.n_heads,
        n_encoder_layers=arch.n_encoder_layers,
        n_decoder_layers=arch.n_decoder_layers,
        d_ff=arch.d_ff,
        max_positions=arch.max_positions,
        n_classes=n_classes,
        dropout_p=arch.dropout_p,
        seed=seed,
    )


def _lora_spec(section) -> LoraSpec:
    return LoraSpec(
        r=section.r,
        alpha=section.alpha,
        dropout_p=section.dropout_p,
        target_projections=section.target_projections,
    )


def _write_jsonl(path: Path, rows: list[dict]):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def _write_json(path: Path, obj):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# prepare


def cmd_prepare(cfg: PipelineConfig) -> dict:
    ws = Workspace(cfg)
    manifest = RunManifest(ws, cfg)
    started = _now()

    input_desc = {
        "data": {
            "source": cfg.data.source,
            "path": cfg.data.path,
            "format": cfg.data.format,
            "synthetic_n": cfg.data.synthetic_n,
            "k_folds": cfg.data.k_folds,
            "vocab_size": cfg.data.vocab_size,
        },
        "root_seed": cfg.run.root_seed,
    }
    if cfg.data.source == "file":
        src_path = Path(cfg.data.path)
        if not src_path.exists():
            raise UsageError(f"dataset file not found: {src_path}")
        input_desc["dataset_sha256"] = sha256_file(src_path)
    input_hash = _hash_obj(input_desc)

    outputs = [ws.raw_path, ws.processed_path, ws.vocab_path, ws.folds_path]
    if manifest.is_fresh("prepare", input_hash):
        return {"stage": "prepare", "skipped": True}

    if cfg.data.source == "synthetic":
        triplets = generate_synthetic_corpus(
            cfg.data.synthetic_n,
            seed=derive_seed(cfg.run.root_seed, "corpus"),
            vocab_size=cfg.data.vocab_size,
        )
    else:
        triplets = load_dataset(cfg.data.path, format=cfg.data.format)
    for t in triplets:
        t.validate()

    processed = [preprocess(t) for t in triplets]
    texts = [ex.summarizer_input for ex in processed] + [
        ex.target_summary for ex in processed
    ]
    # One vocabulary over the whole corpus, built before folding. Fold
    # test sets therefore inform the token inventory — acceptable for a
    # small-data benchmark harness, but not a leakage-free protocol.
    vocab = build_vocab(texts, max_size=cfg.data.vocab_size)
    folds = make_folds(triplets, cfg.data.k_folds, seed=derive_seed(cfg.run.root_seed, "folds"))

    ws.raw_path.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(triplets, ws.raw_path)
    _write_jsonl(
        ws.processed_path,
        [
            {
                "id": ex.id,
                "classifier_input": ex.classifier_input,
                "summarizer_input": ex.summarizer_input,
                "target_summary": ex.target_summary,
                "header": ex.header.code,
                "header_index": ex.header.index,
            }
            for ex in processed
        ],
    )
    vocab.save(ws.vocab_path)
    save_fold_manifest(folds, ws.folds_path)

    info = {
        "n_examples": len(triplets),
        "vocab_size": len(vocab),
        "fold_sizes": [
            len(f.val_ids) + len(f.test_ids) for f in folds.folds
        ],
        "corpus_digest": corpus_mod.corpus_digest(triplets),
    }
    manifest.record("prepare", input_hash, outputs, started, extra=info)
    return {"stage": "prepare", "skipped": False, **info}


# ---------------------------------------------------------------------------
# train


def _train_one_fold(cfg: PipelineConfig, ws: Workspace, manifest: RunManifest,
                    processed, vocab, folds: FoldAssignment, task: str,
                    mode: str, section: TaskModelSection, fold: int) -> dict:
    arch_name = section.arch.name
    stage = f"train:{task}:{mode}:{arch_name}:fold{fold}"
    started = _now()

    input_desc = {
        "task": task,
        "mode": mode,
        "fold": fold,
        "arch": vars(section.arch),
        "train": vars(section.train),
        "lora": {**vars(section.lora), "target_projections": list(section.lora.target_projections)},
        "root_seed": cfg.run.root_seed,
        "processed": sha256_file(ws.processed_path),
        "vocab": sha256_file(ws.vocab_path),
        "folds": sha256_file(ws.folds_path),
        "budgets": [cfg.decode.classifier_budget, cfg.decode.source_budget,
                    cfg.decode.target_budget],
    }
    input_hash = _hash_obj(input_desc)
    ckpt_path = ws.checkpoint_path(task, mode, arch_name, fold)
    curve_path = ws.curve_path(task, mode, arch_name, fold)
    if manifest.is_fresh(stage, input_hash):
        return {"stage": stage, "skipped": True}

    fold_spec = folds.folds[fold]
    label = f"{task}:{arch_name}:{mode}:fold{fold}"
    model_cfg = _model_config(
        section.arch,
        vocab_size=len(vocab),
        n_classes=corpus_mod.N_CLASSES if task == "classify" else None,
        seed=derive_seed(cfg.run.root_seed, f"model:{label}"),
    )
    model = init_model(model_cfg)
    if mode == "lora":
        attach_lora(model, _lora_spec(section.lora),
                    seed=derive_seed(cfg.run.root_seed, f"lora:{label}"))

    train_cfg = TrainConfig(
        epochs=section.train.epochs,
        batch_size=section.train.batch_size,
        learning_rate=section.train.learning_rate,
        grad_accumulation_steps=section.train.grad_accumulation_steps,
        patience=section.train.patience,
        weight_decay=section.train.weight_decay,
        seed=derive_seed(cfg.run.root_seed, f"train:{label}"),
    )

    if task == "classify":
        train_x, train_y = _classifier_arrays(cfg, processed, vocab, fold_spec.train_ids)
        val_x, val_y = _classifier_arrays(cfg, processed, vocab, fold_spec.val_ids)
        result = train_classifier(model, train_x, train_y, val_x, val_y, train_cfg)
    else:
        train_x, train_y = _summarizer_arrays(cfg, section, processed, vocab, fold_spec.train_ids)
        val_x, val_y = _summarizer_arrays(cfg, section, processed, vocab, fold_spec.val_ids)
        result = train_seq2seq(model, train_x, train_y, val_x, val_y, train_cfg)

    counts = count_parameters(model)
    meta = {
        "task": task,
        "mode": mode,
        "arch": arch_name,
        "fold": fold,
        "best_epoch": result.best_epoch,
        "best_val_nll": result.best_val_nll,
        "stopped_early": result.stopped_early,
        "optimizer_steps": result.optimizer_steps,
        "parameters": counts,
    }
    save_checkpoint(ckpt_path, model, vocab, meta=meta)
    _write_jsonl(curve_path, result.history)

    manifest.record(stage, input_hash, [ckpt_path, curve_path], started, extra=meta)
    return {"stage": stage, "skipped": False, **meta}


def cmd_train(cfg: PipelineConfig, task: str, mode: str = "lora",
              fold: str | int = "all", arch: str = "all") -> dict:
    if task not in ("classify", "summarize"):
        raise UsageError(f"task must be 'classify' or 'summarize', got {task!r}")
    if mode not in ("lora", "full"):
        raise UsageError(f"mode must be 'lora' or 'full', got {mode!r}")
    ws, processed, vocab, folds = _load_prepared(cfg)
    manifest = RunManifest(ws, cfg)

    if fold == "all":
        fold_indices = list(range(folds.k))
    else:
        fold_indices = [int(fold)]
        if not 0 <= fold_indices[0] < folds.k:
            raise UsageError(f"fold {fold} outside [0, {folds.k - 1}]")

    if task == "classify":
        sections = [cfg.classifier]
    elif arch == "all":
        sections = list(cfg.summarizer_variants)
    else:
        sections = [cfg.variant_named(arch)]

    results = []
    for section in sections:
        for f in fold_indices:
            results.append(
                _train_one_fold(cfg, ws, manifest, processed, vocab, folds,
                                task, mode, section, f)
            )
    return {"stage": "train", "runs": results}


# ---------------------------------------------------------------------------
# tune


def _default_beam_config(cfg: PipelineConfig) -> BeamConfig:
    return BeamConfig(
        early_stopping=cfg.decode.default_early_stopping,
        num_beams=cfg.decode.default_num_beams,
        no_repeat_ngram_size=cfg.decode.default_no_repeat_ngram_size,
        length_penalty=cfg.decode.default_length_penalty,
        max_target_len=cfg.decode.max_target_len,
        min_target_len=cfg.decode.min_target_len,
    )


def _config_space(cfg: PipelineConfig) -> SearchSpace:
    s = cfg.tune.space
    return SearchSpace(
        (
            Categorical("early_stopping", (True, False)),
            IntDim("num_beams", s.num_beams_low, s.num_beams_high),
            IntDim("no_repeat_ngram_size", s.no_repeat_ngram_low, s.no_repeat_ngram_high),
            FloatDim("length_penalty", s.length_penalty_low, s.length_penalty_high),
        )
    )


def _tune_checkpoint_path(cfg: PipelineConfig, ws: Workspace) -> Path:
    arch = cfg.tune.arch or cfg.summarizer_variants[0].arch.name
    path = ws.checkpoint_path("summarize", "lora", arch, cfg.tune.fold)
    return _require(path, f"train --task summarize --mode lora --arch {arch}")


def cmd_tune(cfg: PipelineConfig, n_trials: int | None = None) -> dict:
    ws, processed, vocab, folds = _load_prepared(cfg)
    manifest = RunManifest(ws, cfg)
    started = _now()
    n_trials = cfg.tune.n_trials if n_trials is None else int(n_trials)
    if n_trials < 1:
        raise UsageError("n_trials must be >= 1")

    ckpt_path = _tune_checkpoint_path(cfg, ws)
    model, ckpt_vocab, _ = load_checkpoint(ckpt_path)

    val_ids = folds.folds[cfg.tune.fold].val_ids[: cfg.tune.n_examples]
    if not val_ids:
        raise DataValidationError("no validation examples available for tuning")
    variant = cfg.variant_named(cfg.tune.arch) if cfg.tune.arch else cfg.summarizer_variants[0]
    src_budget = _effective_budget(cfg.decode.source_budget, variant.arch.max_positions)
    examples = [
        (encode(ckpt_vocab, processed[i].summarizer_input, src_budget).ids,
         processed[i].target_summary)
        for i in val_ids
    ]

    existing = load_trial_log(ws.trial_log_path) if ws.trial_log_path.exists() else []
    remaining = n_trials - len(existing)

    tpe_cfg = TpeConfig(
        n_startup_trials=cfg.tune.n_startup_trials,
        gamma_fraction=cfg.tune.gamma_fraction,
        n_candidates=cfg.tune.n_candidates,
        seed=derive_seed(cfg.run.root_seed, "tune"),
    )
    embedder = RandomProjectionEmbedder(_METRIC_EMBEDDER_DIM)

    if remaining > 0:
        tune_decoding(
            [model], examples, ckpt_vocab, embedder,
            n_trials=remaining, cfg=tpe_cfg, space=_config_space(cfg),
            max_target_len=cfg.decode.max_target_len,
            min_target_len=cfg.decode.min_target_len,
            log_path=ws.trial_log_path,
            initial_history=existing,
        )
    history = load_trial_log(ws.trial_log_path)
    complete = [t for t in history if t.status == "complete"]
    if not complete:
        raise DataValidationError("tuning produced no successful trials")
    best = max(complete, key=lambda t: (t.objective, -t.trial))
    best_cfg = BeamConfig(
        early_stopping=bool(best.params["early_stopping"]),
        num_beams=int(best.params["num_beams"]),
        no_repeat_ngram_size=int(best.params["no_repeat_ngram_size"]),
        length_penalty=float(best.params["length_penalty"]),
        max_target_len=cfg.decode.max_target_len,
        min_target_len=cfg.decode.min_target_len,
    )
    _write_json(
        ws.tuned_config_path,
        {
            "beam_config": best_cfg.to_dict(),
            "objective": best.objective,
            "trial": best.trial,
            "n_trials": len(history),
            "checkpoint": ws.rel(ckpt_path),
            "n_examples": len(examples),
        },
    )
    input_hash = _hash_obj({"n_trials": n_trials, "checkpoint": sha256_file(ckpt_path)})
    manifest.record(
        "tune", input_hash, [ws.trial_log_path, ws.tuned_config_path], started,
        extra={"best_objective": best.objective, "best_trial": best.trial},
    )
    return {
        "stage": "tune",
        "n_trials": len(history),
        "best_objective": best.objective,
        "best_config": best_cfg.to_dict(),
    }


# ---------------------------------------------------------------------------
# predict


def _available_fold_checkpoints(ws: Workspace, task: str, mode: str,
                                arch: str, k: int) -> list[Path]:
    paths = [ws.checkpoint_path(task, mode, arch, f) for f in range(k)]
    return [p for p in paths if p.exists()]


def _composition_archs(cfg: PipelineConfig, composition: str) -> list[str]:
    if composition not in ("run1", "run2", "run3"):
        raise UsageError(
            f"composition must be run1/run2/run3, got {composition!r}"
        )
    names = [v.arch.name for v in cfg.summarizer_variants]
    if composition == "run1":
        return names[:1]
    if composition == "run2":
        if len(names) < 2:
            raise UsageError(
                "composition 'run2' needs a second summarizer variant; "
                f"configured: {names}"
            )
        return names[1:2]
    return names


def _test_ids(folds: FoldAssignment) -> list[str]:
    ids: list[str] = []
    for f in folds.folds:
        ids.extend(f.test_ids)
    return sorted(ids)


def cmd_predict(cfg: PipelineConfig, task: str, composition: str | None = None,
                mode: str | None = None, audit: bool | None = None) -> dict:
    if task not in ("classify", "summarize"):
        raise UsageError(f"task must be 'classify' or 'summarize', got {task!r}")
    ws, processed, vocab, folds = _load_prepared(cfg)
    manifest = RunManifest(ws, cfg)
    started = _now()
    mode = mode or cfg.predict.mode
    if mode not in ("lora", "full"):
        raise UsageError(f"mode must be 'lora' or 'full', got {mode!r}")
    composition = composition or cfg.predict.composition
    audit = cfg.predict.audit if audit is None else audit
    warnings: list[str] = []

    if task == "classify":
        arch = cfg.classifier.arch.name
        ckpt_paths = _available_fold_checkpoints(ws, "classify", mode, arch, folds.k)
        if not ckpt_paths:
            raise UsageError(
                f"no classifier checkpoints for mode={mode}; run 'train --task classify --mode {mode}' first"
            )
        input_hash = _hash_obj(
            {"mode": mode, "audit": audit,
             "ckpts": [sha256_file(p) for p in ckpt_paths]}
        )
        out_path = ws.predictions_path("classify", mode, composition)
        if manifest.is_fresh(f"predict:classify:{mode}", input_hash):
            return {"stage": "predict", "task": task, "skipped": True,
                    "output": str(out_path)}
        checkpoints = [load_checkpoint(p)[:2] for p in ckpt_paths]
        budget = _effective_budget(cfg.decode.classifier_budget,
                                   cfg.classifier.arch.max_positions)
        ids = _test_ids(folds)
        rows = []
        for i in ids:
            per_model = []
            for model, ckpt_vocab in checkpoints:
                seq = encode(ckpt_vocab, processed[i].classifier_input, budget,
                             add_bos_eos=True)
                per_model.append(forward_classify(model, seq.ids, PAD_ID))
            mean = average_logits(per_model)
            row = {
                "id": i,
                "header": corpus_mod.SECTION_HEADERS[int(np.argmax(mean))].code,
            }
            if audit:
                row["audit"] = {
                    "per_model": [np.round(v, 6).tolist() for v in per_model],
                    "mean": np.round(mean, 6).tolist(),
                }
            rows.append(row)
        _write_jsonl(out_path, rows)
        info = {"n_examples": len(rows), "n_models": len(checkpoints)}
        manifest.record(f"predict:classify:{mode}", input_hash, [out_path],
                        started, extra=info)
        return {"stage": "predict", "task": task, "output": str(out_path), **info}

    # summarize
    archs = _composition_archs(cfg, composition)
    ckpt_paths = []
    for arch in archs:
        found = _available_fold_checkpoints(ws, "summarize", mode, arch, folds.k)
        if not found:
            raise UsageError(
                f"no summarizer checkpoints for arch={arch} mode={mode}; "
                f"run 'train --task summarize --mode {mode} --arch {arch}' first"
            )
        ckpt_paths.extend(found)

    if ws.tuned_config_path.exists():
        beam_cfg = BeamConfig.from_dict(
            json.loads(ws.tuned_config_path.read_text(encoding="utf-8"))["beam_config"]
        )
    else:
        beam_cfg = _default_beam_config(cfg)
        warnings.append(
            "no tuned decoding config found; using the documented default "
            f"{beam_cfg.to_dict()}"
        )
        print(f"warning: {warnings[-1]}", file=sys.stderr)

    input_hash = _hash_obj(
        {
            "mode": mode,
            "composition": composition,
            "audit": audit,
            "n_examples": cfg.predict.n_examples,
            "beam": beam_cfg.to_dict(),
            "ckpts": [sha256_file(p) for p in ckpt_paths],
        }
    )
    out_path = ws.predictions_path("summarize", mode, composition)
    if manifest.is_fresh(f"predict:summarize:{mode}:{composition}", input_hash):
        return {"stage": "predict", "task": task, "skipped": True,
                "output": str(out_path)}

    checkpoints = [load_checkpoint(p)[:2] for p in ckpt_paths]
    embedder = CheckpointEmbedder(checkpoints[0][0], checkpoints[0][1])
    ids = _test_ids(folds)[: cfg.predict.n_examples]
    rows = []
    for i in ids:
        texts = []
        for model, ckpt_vocab in checkpoints:
            src_budget = _effective_budget(
                cfg.decode.source_budget, model.config.max_positions
            )
            src = encode(ckpt_vocab, processed[i].summarizer_input, src_budget).ids
            best = beam_search(model, src, beam_cfg)[0]
            texts.append(decode_ids(ckpt_vocab, list(best.ids)))
        selection = post_ensemble_select(texts, embedder)
        row = {"id": i, "summary": selection.candidates[selection.chosen_index]}
        if audit:
            audit_obj = selection.to_json()
            audit_obj["matrix"] = [
                [round(x, 6) for x in r] for r in audit_obj["matrix"]
            ]
            audit_obj["totals"] = [round(x, 6) for x in audit_obj["totals"]]
            row["audit"] = audit_obj
        rows.append(row)

    _write_jsonl(out_path, rows)
    info = {
        "n_examples": len(rows),
        "n_models": len(checkpoints),
        "composition": composition,
        "beam_config": beam_cfg.to_dict(),
    }
    manifest.record(f"predict:summarize:{mode}:{composition}", input_hash,
                    [out_path], started, extra=info)
    result = {"stage": "predict", "task": task, "output": str(out_path), **info}
    if warnings:
        result["warnings"] = warnings
    return result


# ---------------------------------------------------------------------------
# evaluate


def _read_predictions(path: Path) -> list[dict]:
    rows = [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines()]
    if not rows:
        raise DataValidationError(f"predictions file {path} is empty")
    return rows


def _check_ids(pred_ids: list[str], processed: dict):
    missing = [i for i in pred_ids if i not in processed]
    if missing:
        raise DataValidationError(
            f"{len(missing)} prediction id(s) not in the gold corpus; first 5: {missing[:5]}"
        )
    dupes = {i for i in pred_ids if pred_ids.count(i) > 1} if len(pred_ids) < 1000 else set()
    if dupes:
        raise DataValidationError(
            f"duplicate prediction id(s); first 5: {sorted(dupes)[:5]}"
        )


def cmd_evaluate(cfg: PipelineConfig, task: str, composition: str | None = None,
                 mode: str | None = None) -> dict:
    if task not in ("classify", "summarize"):
        raise UsageError(f"task must be 'classify' or 'summarize', got {task!r}")
    ws, processed, vocab, folds = _load_prepared(cfg)
    manifest = RunManifest(ws, cfg)
    started = _now()
    mode = mode or cfg.predict.mode
    if mode not in ("lora", "full"):
        raise UsageError(f"mode must be 'lora' or 'full', got {mode!r}")
    composition = composition or cfg.predict.composition

    pred_path = _require(
        ws.predictions_path(task, mode, composition),
        f"predict --task {task}",
    )
    rows = _read_predictions(pred_path)
    _check_ids([r["id"] for r in rows], processed)

    if task == "classify":
        gold = [processed[r["id"]].header.code for r in rows]
        preds = [r["header"] for r in rows]
        acc = accuracy(preds, gold)
        counts = {}
        for g in gold:
            counts[g] = counts.get(g, 0) + 1
        majority_share = max(counts.values()) / len(gold)
        report = {
            "task": "classify",
            "mode": mode,
            "n_examples": len(rows),
            "accuracy": acc,
            "majority_share": majority_share,
            "disclosures": list(DISCLOSURES),
        }
        text = (
            f"section-header classification ({mode}, {len(rows)} examples)\n"
            f"accuracy        {acc:.4f}\n"
            f"majority share  {majority_share:.4f}\n"
            + "".join(f"note: {d}\n" for d in DISCLOSURES)
        )
    else:
        embedder = RandomProjectionEmbedder(_METRIC_EMBEDDER_DIM)
        per_example = []
        for r in rows:
            scores = score_summary(r["summary"], processed[r["id"]].target_summary, embedder)
            per_example.append({"id": r["id"], **scores})
        keys = ("rouge1_f1", "rouge2_f1", "similarity_f1", "task_aggregate",
                "tuning_objective")
        summary = {k: float(np.mean([e[k] for e in per_example])) for k in keys}
        report = {
            "task": "summarize",
            "mode": mode,
            "composition": composition,
            "n_examples": len(rows),
            "corpus": summary,
            "per_example": per_example,
            "third_aggregate_component": "not computed",
            "disclosures": list(DISCLOSURES),
        }
        text = (
            f"summarization ({mode}, {composition}, {len(rows)} examples)\n"
            f"{'':16}ROUGE-1   Similarity-F1   Aggregate\n"
            f"{'corpus mean':16}{summary['rouge1_f1']:.4f}    "
            f"{summary['similarity_f1']:.4f}          {summary['task_aggregate']:.4f}\n"
            "BLEURT: not computed\n"
            + "".join(f"note: {d}\n" for d in DISCLOSURES)
        )

    json_path = ws.report_path(task, mode, composition, "json")
    txt_path = ws.report_path(task, mode, composition, "txt")
    _write_json(json_path, report)
    txt_path.parent.mkdir(parents=True, exist_ok=True)
    txt_path.write_text(text, encoding="utf-8")

    input_hash = _hash_obj({"pred": sha256_file(pred_path)})
    stage = f"evaluate:{task}:{mode}" + (
        f":{composition}" if task == "summarize" else ""
    )
    manifest.record(stage, input_hash, [json_path, txt_path], started)
    out = {"stage": "evaluate", "task": task, "report": str(json_path)}
    out.update(
        {"accuracy": report["accuracy"]} if task == "classify"
        else {"corpus": report["corpus"]}
    )
    return out


# ---------------------------------------------------------------------------
# report (adapter vs full fine-tune comparison)


def cmd_report(cfg: PipelineConfig) -> dict:
    ws = Workspace(cfg)
    manifest = RunManifest(ws, cfg)
    started = _now()

    rows = []
    used_files = []
    for idx, variant in enumerate(cfg.summarizer_variants):
        composition = f"run{idx + 1}"
        row = {"architecture": variant.arch.name}
        for mode, key in (("lora", "lora_score"), ("full", "full_score")):
            path = ws.report_path("summarize", mode, composition, "json")
            if path.exists():
                obj = json.loads(path.read_text(encoding="utf-8"))
                row[key] = obj["corpus"]["task_aggregate"]
                used_files.append(path)
            else:
                row[key] = None
        rows.append(row)
    if all(r["lora_score"] is None and r["full_score"] is None for r in rows):
        raise UsageError(
            "no summarization evaluations found; run 'evaluate --task summarize' "
            "for the lora and full arms first"
        )

    def _cell(v):
        return f"{v:.4f}" if v is not None else "   —  "

    lines = [
        "summarization: adapter vs full fine-tune (task aggregate)",
        f"{'architecture':16}{'lora-score':>12}{'full-ft-score':>15}",
    ]
    for r in rows:
        lines.append(
            f"{r['architecture']:16}{_cell(r['lora_score']):>12}{_cell(r['full_score']):>15}"
        )
    lines.append("BLEURT: not computed")
    lines.extend(f"note: {d}" for d in DISCLOSURES)
    text = "\n".join(lines) + "\n"

    report = {"rows": rows, "metric": "task_aggregate", "disclosures": list(DISCLOSURES)}
    _write_json(ws.comparison_json, report)
    ws.comparison_txt.parent.mkdir(parents=True, exist_ok=True)
    ws.comparison_txt.write_text(text, encoding="utf-8")

    input_hash = _hash_obj({"files": [sha256_file(p) for p in used_files]})
    manifest.record("report", input_hash, [ws.comparison_json, ws.comparison_txt], started)
    return {"stage": "report", "rows": rows, "output": str(ws.comparison_json)}
