"""Tiny pre-LN transformers with optional low-rank adapters.

Two models share the same blocks: an encoder-only classifier that pools
the first position into 20 section-header logits, and an
encoder-decoder that maps a dialogue+description source to a summary.
Low-rank adapters wrap chosen attention projections; the base weight is
frozen and the adapter contributes ``scale * (x @ A) @ B`` on top.

Weights live in float32 by default; the gradient-check tests rebuild
the same graph in float64.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .seeding import derive_seed

NEG_INF = -1e9
_PROJECTION_NAMES = ("query", "key", "value", "output")


@dataclass
class RunMode:
    """Forward-pass context: training toggles dropout, rng drives it."""

    training: bool = False
    rng: np.random.Generator | None = None


EVAL_MODE = RunMode(training=False, rng=None)


class Module:
    """Base class with parameter/submodule registration by attribute."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_modules", {})

    def __setattr__(self, name, value):
        if isinstance(value, Tensor):
            self._params[name] = value
        elif isinstance(value, Module):
            self._modules[name] = value
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix: str = ""):
        for name, p in self._params.items():
            yield (prefix + name, p)
        for name, m in self._modules.items():
            yield from m.named_parameters(prefix + name + ".")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_arrays(self, arrays: dict[str, np.ndarray]):
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(arrays))
        extra = sorted(set(arrays) - set(own))
        if missing or extra:
            raise ValueError(
                f"parameter name mismatch: missing={missing[:3]} extra={extra[:3]}"
            )
        for name, p in own.items():
            arr = np.asarray(arrays[name])
            if arr.shape != p.data.shape:
                raise ValueError(
                    f"shape mismatch for {name}: {arr.shape} vs {p.data.shape}"
                )
            p.data = arr.astype(p.data.dtype, copy=True)


class ModuleList(Module):
    def __init__(self, items):
        super().__init__()
        self.items = list(items)
        for i, m in enumerate(self.items):
            self._modules[str(i)] = m

    def __iter__(self):
        return iter(self.items)

    def __len__(self):
        return len(self.items)


class LoraAdapter(Module):
    """Rank-r bottleneck: scale * (drop(x) @ A) @ B, with B zero at init."""

    def __init__(self, d_in: int, d_out: int, r: int, alpha: float,
                 dropout_p: float, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.A = Tensor(rng.normal(0.0, 0.02, (d_in, r)).astype(dtype), requires_grad=True)
        self.B = Tensor(np.zeros((r, d_out), dtype=dtype), requires_grad=True)
        self.scale = alpha / r
        self.dropout_p = dropout_p

    def forward(self, x: Tensor, mode: RunMode) -> Tensor:
        h = x
        if mode.training and self.dropout_p > 0.0:
            h = ad.dropout(h, self.dropout_p, mode.rng)
        return ad.scale(ad.matmul(ad.matmul(h, self.A), self.B), self.scale)

    def delta_weight(self) -> np.ndarray:
        """The merged-in increment, in the Linear's (d_in, d_out) layout."""
        return self.scale * (self.A.data @ self.B.data)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.W = Tensor(rng.normal(0.0, 0.02, (d_in, d_out)).astype(dtype), requires_grad=True)
        self.b = Tensor(np.zeros(d_out, dtype=dtype), requires_grad=True)
        self.lora: LoraAdapter | None = None

    def forward(self, x: Tensor, mode: RunMode) -> Tensor:
        y = ad.add(ad.matmul(x, self.W), self.b)
        if self.lora is not None:
            y = ad.add(y, self.lora.forward(x, mode))
        return y


class LayerNorm(Module):
    def __init__(self, d: int, dtype=np.float32):
        super().__init__()
        self.gamma = Tensor(np.ones(d, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(d, dtype=dtype), requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        return ad.layer_norm(x, self.gamma, self.beta)


class MultiHeadAttention(Module):
    def __init__(self, d_model: int, n_heads: int, rng, dtype=np.float32):
        super().__init__()
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.q_proj = Linear(d_model, d_model, rng, dtype)
        self.k_proj = Linear(d_model, d_model, rng, dtype)
        self.v_proj = Linear(d_model, d_model, rng, dtype)
        self.out_proj = Linear(d_model, d_model, rng, dtype)

    def _split(self, x: Tensor, length: int) -> Tensor:
        # (B, T, D) -> (B, H, T, d_head)
        b = x.shape[0]
        x = ad.reshape(x, (b, length, self.n_heads, self.d_head))
        return ad.transpose(x, (0, 2, 1, 3))

    def forward(self, q_in: Tensor, kv_in: Tensor, mode: RunMode,
                additive_mask: np.ndarray | None = None) -> Tensor:
        t_q, t_k = q_in.shape[1], kv_in.shape[1]
        q = self._split(self.q_proj.forward(q_in, mode), t_q)
        k = self._split(self.k_proj.forward(kv_in, mode), t_k)
        v = self._split(self.v_proj.forward(kv_in, mode), t_k)
        scores = ad.scale(
            ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(self.d_head)
        )
        if additive_mask is not None:
            scores = ad.add_const(scores, additive_mask)
        attn = ad.softmax(scores, axis=-1)
        ctx = ad.matmul(attn, v)  # (B, H, Tq, d_head)
        b = ctx.shape[0]
        merged = ad.reshape(
            ad.transpose(ctx, (0, 2, 1, 3)), (b, t_q, self.n_heads * self.d_head)
        )
        return self.out_proj.forward(merged, mode)

    def projection(self, name: str) -> Linear:
        return {
            "query": self.q_proj,
            "key": self.k_proj,
            "value": self.v_proj,
            "output": self.out_proj,
        }[name]


class FeedForward(Module):
    def __init__(self, d_model: int, d_ff: int, rng, dtype=np.float32):
        super().__init__()
        self.fc1 = Linear(d_model, d_ff, rng, dtype)
        self.fc2 = Linear(d_ff, d_model, rng, dtype)

    def forward(self, x: Tensor, mode: RunMode) -> Tensor:
        return self.fc2.forward(ad.gelu(self.fc1.forward(x, mode)), mode)


def _residual_dropout(x: Tensor, p: float, mode: RunMode) -> Tensor:
    if mode.training and p > 0.0:
        return ad.dropout(x, p, mode.rng)
    return x


class EncoderLayer(Module):
    def __init__(self, d_model, n_heads, d_ff, dropout_p, rng, dtype=np.float32):
        super().__init__()
        self.ln1 = LayerNorm(d_model, dtype)
        self.attn = MultiHeadAttention(d_model, n_heads, rng, dtype)
        self.ln2 = LayerNorm(d_model, dtype)
        self.ff = FeedForward(d_model, d_ff, rng, dtype)
        self.dropout_p = dropout_p

    def forward(self, x: Tensor, mode: RunMode, mask) -> Tensor:
        h = self.ln1.forward(x)
        x = ad.add(x, _residual_dropout(self.attn.forward(h, h, mode, mask), self.dropout_p, mode))
        h = self.ln2.forward(x)
        x = ad.add(x, _residual_dropout(self.ff.forward(h, mode), self.dropout_p, mode))
        return x


class DecoderLayer(Module):
    def __init__(self, d_model, n_heads, d_ff, dropout_p, rng, dtype=np.float32):
        super().__init__()
        self.ln1 = LayerNorm(d_model, dtype)
        self.self_attn = MultiHeadAttention(d_model, n_heads, rng, dtype)
        self.ln2 = LayerNorm(d_model, dtype)
        self.cross_attn = MultiHeadAttention(d_model, n_heads, rng, dtype)
        self.ln3 = LayerNorm(d_model, dtype)
        self.ff = FeedForward(d_model, d_ff, rng, dtype)
        self.dropout_p = dropout_p

    def forward(self, x: Tensor, memory: Tensor, mode: RunMode,
                self_mask, memory_mask) -> Tensor:
        h = self.ln1.forward(x)
        x = ad.add(
            x, _residual_dropout(self.self_attn.forward(h, h, mode, self_mask), self.dropout_p, mode)
        )
        h = self.ln2.forward(x)
        x = ad.add(
            x,
            _residual_dropout(
                self.cross_attn.forward(h, memory, mode, memory_mask), self.dropout_p, mode
            ),
        )
        h = self.ln3.forward(x)
        x = ad.add(x, _residual_dropout(self.ff.forward(h, mode), self.dropout_p, mode))
        return x


# ---------------------------------------------------------------------------
# Configs


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    d_model: int = 64
    n_heads: int = 4
    n_encoder_layers: int = 2
    n_decoder_layers: int = 2
    d_ff: int = 128
    max_positions: int = 512
    n_classes: int | None = None
    dropout_p: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ValueError(
                f"d_model={self.d_model} not divisible by n_heads={self.n_heads}"
            )
        if min(self.vocab_size, self.d_model, self.n_heads, self.d_ff,
               self.max_positions, self.n_encoder_layers) < 1:
            raise ValueError("model dimensions must be positive")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError(f"dropout_p={self.dropout_p} outside [0, 1)")

    def to_dict(self) -> dict:
        return {
            "vocab_size": self.vocab_size,
            "d_model": self.d_model,
            "n_heads": self.n_heads,
            "n_encoder_layers": self.n_encoder_layers,
            "n_decoder_layers": self.n_decoder_layers,
            "d_ff": self.d_ff,
            "max_positions": self.max_positions,
            "n_classes": self.n_classes,
            "dropout_p": self.dropout_p,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass(frozen=True)
class LoraSpec:
    r: int = 8
    alpha: float = 32.0
    dropout_p: float = 0.05
    target_projections: tuple[str, ...] = ("query", "value")

    def __post_init__(self):
        if self.r < 1:
            raise ValueError(f"rank must be >= 1, got {self.r}")
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError(f"adapter dropout_p={self.dropout_p} outside [0, 1)")
        bad = [t for t in self.target_projections if t not in _PROJECTION_NAMES]
        if bad or not self.target_projections:
            raise ValueError(
                f"target_projections must be a non-empty subset of {_PROJECTION_NAMES}, got {self.target_projections}"
            )
        object.__setattr__(self, "target_projections", tuple(self.target_projections))

    @property
    def scale(self) -> float:
        return self.alpha / self.r

    def to_dict(self) -> dict:
        return {
            "r": self.r,
            "alpha": self.alpha,
            "dropout_p": self.dropout_p,
            "target_projections": list(self.target_projections),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LoraSpec":
        d = dict(d)
        d["target_projections"] = tuple(d["target_projections"])
        return cls(**d)


# ---------------------------------------------------------------------------
# Masks


def padding_mask(ids: np.ndarray, pad_id: int) -> np.ndarray:
    """(B, S) ids -> (B, 1, 1, S) additive mask, NEG_INF at PAD columns."""
    blocked = (np.asarray(ids) == pad_id)
    return np.where(blocked, NEG_INF, 0.0).astype(np.float32)[:, None, None, :]

def causal_mask(t: int) -> np.ndarray:
    """(1, 1, T, T) additive mask blocking attention to future positions."""
    m = np.triu(np.full((t, t), NEG_INF, dtype=np.float32), k=1)
    return m[None, None, :, :]


# ---------------------------------------------------------------------------
# Models


class _EmbeddingStack(Module):
    def __init__(self, cfg: ModelConfig, rng, dtype=np.float32):
        super().__init__()
        self.tokens = Tensor(
            rng.normal(0.0, 0.02, (cfg.vocab_size, cfg.d_model)).astype(dtype),
            requires_grad=True,
        )
        self.positions = Tensor(
            rng.normal(0.0, 0.02, (cfg.max_positions, cfg.d_model)).astype(dtype),
            requires_grad=True,
        )
        self.dropout_p = cfg.dropout_p
        self.max_positions = cfg.max_positions

    def forward(self, ids: np.ndarray, mode: RunMode) -> Tensor:
        ids = np.asarray(ids)
        t = ids.shape[-1]
        if t > self.max_positions:
            raise ValueError(
                f"sequence length {t} exceeds max_positions {self.max_positions}"
            )
        x = ad.add(
            ad.embedding(self.tokens, ids),
            ad.embedding(self.positions, np.arange(t)),
        )
        return _residual_dropout(x, self.dropout_p, mode)


class Encoder(Module):
    def __init__(self, cfg: ModelConfig, rng, dtype=np.float32):
        super().__init__()
        self.embed = _EmbeddingStack(cfg, rng, dtype)
        self.layers = ModuleList(
            EncoderLayer(cfg.d_model, cfg.n_heads, cfg.d_ff, cfg.dropout_p, rng, dtype)
            for _ in range(cfg.n_encoder_layers)
        )
        self.ln_final = LayerNorm(cfg.d_model, dtype)

    def forward(self, ids: np.ndarray, mode: RunMode, mask) -> Tensor:
        x = self.embed.forward(ids, mode)
        for layer in self.layers:
            x = layer.forward(x, mode, mask)
        return self.ln_final.forward(x)


class TransformerClassifier(Module):
    """Encoder + first-position pooling + linear head over section headers."""

    kind = "classifier"

    def __init__(self, cfg: ModelConfig, dtype=np.float32):
        super().__init__()
        if cfg.n_classes is None:
            raise ValueError("classifier config requires n_classes")
        self.config = cfg
        self.lora_spec: LoraSpec | None = None
        rng = np.random.default_rng(cfg.seed)
        self.encoder = Encoder(cfg, rng, dtype)
        self.head = Linear(cfg.d_model, cfg.n_classes, rng, dtype)

    def logits(self, ids: np.ndarray, pad_id: int, mode: RunMode = EVAL_MODE) -> Tensor:
        mask = padding_mask(ids, pad_id)
        enc = self.encoder.forward(ids, mode, mask)
        pooled = ad.select_position(enc, 0)
        return self.head.forward(pooled, mode)

    def head_modules(self):
        return [self.head]

    def attention_blocks(self):
        return [layer.attn for layer in self.encoder.layers]


class TransformerSeq2Seq(Module):
    """Encoder-decoder with causal self-attention and a tied-nothing LM head."""

    kind = "seq2seq"

    def __init__(self, cfg: ModelConfig, dtype=np.float32):
        super().__init__()
        if cfg.n_decoder_layers < 1:
            raise ValueError("seq2seq config requires n_decoder_layers >= 1")
        self.config = cfg
        self.lora_spec: LoraSpec | None = None
        rng = np.random.default_rng(cfg.seed)
        self.encoder = Encoder(cfg, rng, dtype)
        self.dec_embed = _EmbeddingStack(cfg, rng, dtype)
        self.dec_layers = ModuleList(
            DecoderLayer(cfg.d_model, cfg.n_heads, cfg.d_ff, cfg.dropout_p, rng, dtype)
            for _ in range(cfg.n_decoder_layers)
        )
        self.dec_ln_final = LayerNorm(cfg.d_model, dtype)
        self.lm_head = Linear(cfg.d_model, cfg.vocab_size, rng, dtype)

    def encode(self, src_ids: np.ndarray, pad_id: int, mode: RunMode = EVAL_MODE):
        src_mask = padding_mask(src_ids, pad_id)
        return self.encoder.forward(src_ids, mode, src_mask), src_mask

    def _decode_states(self, memory: Tensor, src_mask, tgt_in: np.ndarray,
                       mode: RunMode) -> Tensor:
        t = np.asarray(tgt_in).shape[-1]
        self_mask = causal_mask(t)
        x = self.dec_embed.forward(tgt_in, mode)
        for layer in self.dec_layers:
            x = layer.forward(x, memory, mode, self_mask, src_mask)
        return self.dec_ln_final.forward(x)

    def logprobs(self, src_ids: np.ndarray, tgt_in: np.ndarray, pad_id: int,
                 mode: RunMode = EVAL_MODE) -> Tensor:
        """(B, T, V) log-probabilities for teacher-forced targets."""
        memory, src_mask = self.encode(src_ids, pad_id, mode)
        states = self._decode_states(memory, src_mask, tgt_in, mode)
        return ad.log_softmax(self.lm_head.forward(states, mode), axis=-1)

    def next_logprobs(self, memory: Tensor, src_mask: np.ndarray,
                      prefixes: np.ndarray) -> np.ndarray:
        """(B, V) log-probs for the next token after each equal-length prefix."""
        with ad.no_grad():
            states = self._decode_states(memory, src_mask, prefixes, EVAL_MODE)
            last = ad.select_position(states, prefixes.shape[-1] - 1)
            out = ad.log_softmax(self.lm_head.forward(last, EVAL_MODE), axis=-1)
        return out.data

    def head_modules(self):
        return [self.lm_head]

    def attention_blocks(self):
        blocks = [layer.attn for layer in self.encoder.layers]
        for layer in self.dec_layers:
            blocks.extend([layer.self_attn, layer.cross_attn])
        return blocks


def init_model(cfg: ModelConfig, dtype=np.float32):
    """Build a classifier (n_classes set) or seq2seq model, deterministically."""
    if cfg.n_classes is not None:
        return TransformerClassifier(cfg, dtype)
    return TransformerSeq2Seq(cfg, dtype)


# ---------------------------------------------------------------------------
# Adapter plumbing


def _adapted_linears(model) -> list[tuple[str, Linear]]:
    out = []

    def walk(mod: Module, prefix: str):
        if isinstance(mod, Linear) and mod.lora is not None:
            out.append((prefix.rstrip("."), mod))
        for child_name, child in mod._modules.items():
            walk(child, prefix + child_name + ".")
    walk(model, "")
    return out


def attach_lora(model, spec: LoraSpec, seed: int | None = None, dtype=np.float32):
    """Freeze the base model and bolt adapters onto chosen attention projections.

    Heads (classifier head / LM head) stay trainable. Attaching twice is an
    error; merge first or rebuild.
    """
    if model.lora_spec is not None:
        raise ValueError("model already has an adapter attached")
    if seed is None:
        seed = derive_seed(model.config.seed, "lora-init")
    rng = np.random.default_rng(seed)
    for p in model.parameters():
        p.requires_grad = False
    for block in model.attention_blocks():
        for proj_name in spec.target_projections:
            lin = block.projection(proj_name)
            d_in, d_out = lin.W.data.shape
            lin.lora = LoraAdapter(d_in, d_out, spec.r, spec.alpha, spec.dropout_p, rng, dtype)
    for head in model.head_modules():
        for p in head.parameters():
            p.requires_grad = True
    model.lora_spec = spec
    return model


def merge_lora(model):
    """Fold every adapter into its base weight and drop the adapters.

    After merging the model is a plain (fully trainable) transformer and
    carries no adapter state; calling this without an adapter is an error.
    """
    if model.lora_spec is None:
        raise ValueError("model has no adapter to merge")
    for _, lin in _adapted_linears(model):
        lin.W.data = lin.W.data + lin.lora.delta_weight().astype(lin.W.data.dtype)
        lin.lora = None
        lin._modules.pop("lora", None)
    model.lora_spec = None
    for p in model.parameters():
        p.requires_grad = True
    return model


def adapter_parameter_count(model) -> int:
    total = 0
    for _, lin in _adapted_linears(model):
        total += lin.lora.A.data.size + lin.lora.B.data.size
    return total


def count_parameters(model) -> dict[str, int]:
    total = trainable = 0
    for _, p in model.named_parameters():
        total += p.data.size
        if p.requires_grad:
            trainable += p.data.size
    return {
        "total": total,
        "trainable": trainable,
        "frozen": total - trainable,
        "adapter": adapter_parameter_count(model),
    }


def lora_parameter_formula(model, spec: LoraSpec) -> int:
    """Closed-form adapter size: sum of r * (d_in + d_out) over adapted mats."""
    count = 0
    for block in model.attention_blocks():
        for proj_name in spec.target_projections:
            lin = block.projection(proj_name)
            d_in, d_out = lin.W.data.shape
            count += spec.r * (d_in + d_out)
    return count


# ---------------------------------------------------------------------------
# Single-example inference conveniences


def forward_classify(model: TransformerClassifier, ids, pad_id: int) -> np.ndarray:
    with ad.no_grad():
        logits = model.logits(np.asarray(ids, dtype=np.int64)[None, :], pad_id)
    return logits.data[0]


def forward_seq2seq(model: TransformerSeq2Seq, src_ids, tgt_in, pad_id: int) -> np.ndarray:
    with ad.no_grad():
        lp = model.logprobs(
            np.asarray(src_ids, dtype=np.int64)[None, :],
            np.asarray(tgt_in, dtype=np.int64)[None, :],
            pad_id,
        )
    return lp.data[0]
