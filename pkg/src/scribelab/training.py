"""Training loops: AdamW, linear LR decay, accumulation, early stopping.

The two loops (classifier and seq2seq) share one engine; they differ only
in how a micro-batch becomes a loss. Everything is seeded through
`derive_seed`, so a fixed TrainConfig reproduces bit-identical weights.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import TrainingDivergedError
from .model import RunMode
from .seeding import derive_seed
from .tokenizer import BOS_ID, PAD_ID

# Sentinel "never a real label" pad id for classification targets, so the
# same masked NLL works for both tasks.
_NO_PAD = -1


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 16
    learning_rate: float = 3e-4
    grad_accumulation_steps: int = 1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    patience: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.grad_accumulation_steps < 1:
            raise ValueError("epochs, batch_size and grad_accumulation_steps must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")


@dataclass
class TrainResult:
    history: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    best_val_nll: float = math.inf
    stopped_early: bool = False
    optimizer_steps: int = 0


def linear_lr(step: int, total_steps: int, lr0: float) -> float:
    """lr0 * (1 - step/total_steps), floored at zero."""
    return lr0 * max(0.0, 1.0 - step / total_steps)


class AdamW:
    """Adam with decoupled weight decay; 1-D tensors (biases, LayerNorm
    scales/shifts) are excluded from decay. Only trainable tensors are
    ever touched, which is what keeps frozen base weights bit-frozen."""

    def __init__(self, named_params, beta1=0.9, beta2=0.999, eps=1e-8,
                 weight_decay=0.01):
        self.params = [(n, p) for n, p in named_params if p.requires_grad]
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.weight_decay = weight_decay
        self.t = 0
        self._m = {n: np.zeros_like(p.data) for n, p in self.params}
        self._v = {n: np.zeros_like(p.data) for n, p in self.params}

    def step(self, lr: float):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1 ** self.t
        bias2 = 1.0 - b2 ** self.t
        for name, p in self.params:
            if p.grad is None:
                continue
            g = p.grad
            m = self._m[name]
            v = self._v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            update = (m / bias1) / (np.sqrt(v / bias2) + self.eps)
            if self.weight_decay > 0.0 and p.data.ndim >= 2:
                update = update + self.weight_decay * p.data
            p.data = p.data - lr * update

    def zero_grad(self):
        for _, p in self.params:
            p.zero_grad()


def pad_batch(seqs: list[list[int]], pad_id: int = PAD_ID,
              width: int | None = None) -> np.ndarray:
    """Right-pad variable-length id lists into one (B, T) int64 array."""
    if width is None:
        width = max((len(s) for s in seqs), default=1)
    out = np.full((len(seqs), max(width, 1)), pad_id, dtype=np.int64)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = s
    return out


def shift_right(targets: np.ndarray, bos_id: int = BOS_ID,
                pad_id: int = PAD_ID) -> np.ndarray:
    """Teacher-forcing input: BOS followed by the target minus its last slot."""
    tgt_in = np.full_like(targets, pad_id)
    tgt_in[:, 0] = bos_id
    tgt_in[:, 1:] = targets[:, :-1]
    return tgt_in


def _snapshot(model) -> dict[str, np.ndarray]:
    return {n: p.data.copy() for n, p in model.named_parameters()}


def _restore(model, snap: dict[str, np.ndarray]):
    for n, p in model.named_parameters():
        p.data = snap[n].copy()


def _classifier_loss(model, ids, labels, mode):
    logits = model.logits(ids, PAD_ID, mode)
    logprobs = ad.log_softmax(logits, axis=-1)
    return ad.masked_nll(logprobs, labels, pad_id=_NO_PAD), int(labels.shape[0])


def _seq2seq_loss(model, src, tgt, mode):
    tgt_in = shift_right(tgt)
    logprobs = model.logprobs(src, tgt_in, PAD_ID, mode)
    return ad.masked_nll(logprobs, tgt, pad_id=PAD_ID), int((tgt != PAD_ID).sum())


def _run_training(model, loss_fn, train_inputs, train_targets, val_inputs,
                  val_targets, cfg: TrainConfig) -> TrainResult:
    n = train_inputs.shape[0]
    if n == 0 or val_inputs.shape[0] == 0:
        raise ValueError("training and validation sets must be non-empty")
    shuffle_rng = np.random.default_rng(derive_seed(cfg.seed, "shuffle"))
    mode = RunMode(training=True, rng=np.random.default_rng(derive_seed(cfg.seed, "dropout")))
    opt = AdamW(model.named_parameters(), cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay)

    micro_per_epoch = math.ceil(n / cfg.batch_size)
    steps_per_epoch = math.ceil(micro_per_epoch / cfg.grad_accumulation_steps)
    total_steps = cfg.epochs * steps_per_epoch

    result = TrainResult()
    best_state: dict[str, np.ndarray] | None = None
    bad_evals = 0
    step = 0

    for epoch in range(cfg.epochs):
        perm = shuffle_rng.permutation(n)
        loss_sum = 0.0
        count_sum = 0
        pending = 0
        last_lr = linear_lr(step, total_steps, cfg.learning_rate)
        for start in range(0, n, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            loss, weight = loss_fn(model, train_inputs[idx], train_targets[idx], mode)
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingDivergedError(
                    f"non-finite training loss at epoch {epoch}"
                )
            loss_sum += value * weight
            count_sum += weight
            ad.scale(loss, 1.0 / cfg.grad_accumulation_steps).backward()
            pending += 1
            if pending == cfg.grad_accumulation_steps:
                last_lr = linear_lr(step, total_steps, cfg.learning_rate)
                opt.step(last_lr)
                opt.zero_grad()
                step += 1
                pending = 0
        if pending:
            last_lr = linear_lr(step, total_steps, cfg.learning_rate)
            opt.step(last_lr)
            opt.zero_grad()
            step += 1

        val_nll = _evaluate(model, loss_fn, val_inputs, val_targets, cfg.batch_size)
        result.history.append(
            {
                "epoch": epoch,
                "train_nll": loss_sum / max(count_sum, 1),
                "val_nll": val_nll,
                "lr": last_lr,
            }
        )
        if val_nll < result.best_val_nll:
            result.best_val_nll = val_nll
            result.best_epoch = epoch
            best_state = _snapshot(model)
            bad_evals = 0
        else:
            bad_evals += 1
            if bad_evals >= cfg.patience:
                result.stopped_early = True
                break

    result.optimizer_steps = step
    if best_state is not None:
        _restore(model, best_state)
    return result


def _evaluate(model, loss_fn, inputs, targets, batch_size: int) -> float:
    total = 0.0
    count = 0
    with ad.no_grad():
        for start in range(0, inputs.shape[0], batch_size):
            sl = slice(start, start + batch_size)
            loss, weight = loss_fn(model, inputs[sl], targets[sl], RunMode())
            total += loss.item() * weight
            count += weight
    return total / max(count, 1)


def train_classifier(model, train_ids: np.ndarray, train_labels: np.ndarray,
                     val_ids: np.ndarray, val_labels: np.ndarray,
                     cfg: TrainConfig) -> TrainResult:
    """Fit section-header classification; restores the best-val epoch."""
    return _run_training(
        model, _classifier_loss,
        np.asarray(train_ids), np.asarray(train_labels, dtype=np.int64),
        np.asarray(val_ids), np.asarray(val_labels, dtype=np.int64), cfg,
    )


def train_seq2seq(model, train_src: np.ndarray, train_tgt: np.ndarray,
                  val_src: np.ndarray, val_tgt: np.ndarray,
                  cfg: TrainConfig) -> TrainResult:
    """Fit summarization with teacher forcing; restores the best-val epoch."""
    return _run_training(
        model, _seq2seq_loss,
        np.asarray(train_src), np.asarray(train_tgt),
        np.asarray(val_src), np.asarray(val_tgt), cfg,
    )


def evaluate_classifier_nll(model, ids, labels, batch_size: int = 32) -> float:
    return _evaluate(model, _classifier_loss, np.asarray(ids),
                     np.asarray(labels, dtype=np.int64), batch_size)


def evaluate_seq2seq_nll(model, src, tgt, batch_size: int = 32) -> float:
    return _evaluate(model, _seq2seq_loss, np.asarray(src), np.asarray(tgt),
                     batch_size)
