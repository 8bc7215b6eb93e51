"""Language models built from the mixing blocks: embeddings, stack, LM head.

Two interchangeable kinds share everything except the mixing mechanism:
``block_kind="grassmann"`` stacks Grassmann mixing blocks, ``"attention"``
stacks causal multi-head attention blocks of matched size.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import tensor as T
from .blocks import (AttentionBlockParams, GrassmannBlockParams,
                     WindowSchedule, attention_block_forward,
                     grassmann_block_forward)
from .geometry import num_pairs
from .tensor import Tensor

BLOCK_KINDS = ("grassmann", "attention")


@dataclass
class ModelConfig:
    vocab_size: int
    model_dim: int
    layers: int
    max_len: int
    reduced_dim: int = 32
    ffn_dim: int = 0                  # 0 means 4 * model_dim
    heads: int = 4
    block_kind: str = "grassmann"
    window_schedule: list = field(default_factory=list)
    dropout: float = 0.1
    tie_lm_head: bool = False
    init_std: float = 0.02
    pairing: str = "backward"
    plucker_eps: float = 1e-6

    def __post_init__(self):
        if self.ffn_dim == 0:
            self.ffn_dim = 4 * self.model_dim
        if self.block_kind not in BLOCK_KINDS:
            raise ValueError("unknown block kind %r" % self.block_kind)
        if self.vocab_size < 2 or self.layers < 1:
            raise ValueError("need vocab_size >= 2 and layers >= 1")
        if self.block_kind == "grassmann":
            if not 2 <= self.reduced_dim < self.model_dim:
                raise ValueError("need 2 <= reduced_dim < model_dim")
            if not self.window_schedule:
                raise ValueError("grassmann models need a window schedule")
            sched = self.schedule()
            if len(sched) != self.layers:
                raise ValueError("window schedule covers %d layers, model has %d"
                                 % (len(sched), self.layers))
            sched.validate_max_len(self.max_len)
        else:
            if self.model_dim % self.heads != 0:
                raise ValueError("model_dim must be divisible by heads")

    def schedule(self) -> WindowSchedule:
        ws = self.window_schedule
        if isinstance(ws, WindowSchedule):
            return ws
        return WindowSchedule([list(offs) for offs in ws])


@dataclass
class LanguageModel:
    config: ModelConfig
    tok_emb: Tensor                # [V, d]
    pos_emb: Tensor                # [L_max, d]
    blocks: list                   # per-layer parameter records
    head_w: Tensor | None          # [V, d], None when tied to tok_emb
    head_b: Tensor                 # [V]


def _normal(rng, shape, std, dtype):
    return Tensor(rng.normal(0.0, std, size=shape).astype(dtype),
                  requires_grad=True)


def _zeros(shape, dtype):
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


def _ones(shape, dtype):
    return Tensor(np.ones(shape, dtype=dtype), requires_grad=True)


def _init_grassmann_block(rng, cfg: ModelConfig, dtype) -> GrassmannBlockParams:
    d, r, dff = cfg.model_dim, cfg.reduced_dim, cfg.ffn_dim
    std = cfg.init_std
    return GrassmannBlockParams(
        reduce_w=_normal(rng, (r, d), std, dtype), reduce_b=_zeros((r,), dtype),
        plucker_w=_normal(rng, (d, num_pairs(r)), std, dtype),
        plucker_b=_zeros((d,), dtype),
        gate_w=_normal(rng, (d, 2 * d), std, dtype), gate_b=_zeros((d,), dtype),
        ffn_w1=_normal(rng, (dff, d), std, dtype), ffn_b1=_zeros((dff,), dtype),
        ffn_w2=_normal(rng, (d, dff), std, dtype), ffn_b2=_zeros((d,), dtype),
        norm1_g=_ones((d,), dtype), norm1_b=_zeros((d,), dtype),
        norm2_g=_ones((d,), dtype), norm2_b=_zeros((d,), dtype),
        dropout=cfg.dropout, plucker_eps=cfg.plucker_eps)


def _init_attention_block(rng, cfg: ModelConfig, dtype) -> AttentionBlockParams:
    d, dff = cfg.model_dim, cfg.ffn_dim
    std = cfg.init_std
    return AttentionBlockParams(
        q_w=_normal(rng, (d, d), std, dtype), q_b=_zeros((d,), dtype),
        k_w=_normal(rng, (d, d), std, dtype), k_b=_zeros((d,), dtype),
        v_w=_normal(rng, (d, d), std, dtype), v_b=_zeros((d,), dtype),
        out_w=_normal(rng, (d, d), std, dtype), out_b=_zeros((d,), dtype),
        ffn_w1=_normal(rng, (dff, d), std, dtype), ffn_b1=_zeros((dff,), dtype),
        ffn_w2=_normal(rng, (d, dff), std, dtype), ffn_b2=_zeros((d,), dtype),
        norm1_g=_ones((d,), dtype), norm1_b=_zeros((d,), dtype),
        norm2_g=_ones((d,), dtype), norm2_b=_zeros((d,), dtype),
        heads=cfg.heads, dropout=cfg.dropout)


def init_params(config: ModelConfig, seed: int = 0,
                dtype=np.float32) -> LanguageModel:
    """Deterministic initialization: weights ~ N(0, init_std), biases zero,
    norm gains one."""
    rng = np.random.default_rng(seed)
    std = config.init_std
    tok = _normal(rng, (config.vocab_size, config.model_dim), std, dtype)
    pos = _normal(rng, (config.max_len, config.model_dim), std, dtype)
    maker = (_init_grassmann_block if config.block_kind == "grassmann"
             else _init_attention_block)
    blocks = [maker(rng, config, dtype) for _ in range(config.layers)]
    head_w = None
    if not config.tie_lm_head:
        head_w = _normal(rng, (config.vocab_size, config.model_dim), std, dtype)
    head_b = _zeros((config.vocab_size,), dtype)
    return LanguageModel(config, tok, pos, blocks, head_w, head_b)


_GRASSMANN_FIELDS = ("reduce_w", "reduce_b", "plucker_w", "plucker_b",
                     "gate_w", "gate_b", "ffn_w1", "ffn_b1", "ffn_w2",
                     "ffn_b2", "norm1_g", "norm1_b", "norm2_g", "norm2_b")
_ATTENTION_FIELDS = ("q_w", "q_b", "k_w", "k_b", "v_w", "v_b", "out_w",
                     "out_b", "ffn_w1", "ffn_b1", "ffn_w2", "ffn_b2",
                     "norm1_g", "norm1_b", "norm2_g", "norm2_b")


def named_parameters(model: LanguageModel) -> dict[str, Tensor]:
    """Learnable tensors in canonical (checkpoint) order."""
    out = {"embed.tok": model.tok_emb, "embed.pos": model.pos_emb}
    fields = (_GRASSMANN_FIELDS if model.config.block_kind == "grassmann"
              else _ATTENTION_FIELDS)
    for i, blk in enumerate(model.blocks):
        for name in fields:
            out["block%d.%s" % (i, name)] = getattr(blk, name)
    if model.head_w is not None:
        out["head.w"] = model.head_w
    out["head.b"] = model.head_b
    return out


def embed_tokens(tokens, tok_emb: Tensor, pos_emb: Tensor) -> Tensor:
    """Token lookup plus positional rows; tokens is [L] or [B, L]."""
    idx = np.asarray(tokens)
    length = idx.shape[-1]
    if length > pos_emb.data.shape[0]:
        raise ValueError("sequence length %d exceeds max length %d"
                         % (length, pos_emb.data.shape[0]))
    return T.take_rows(tok_emb, idx) + T.narrow(pos_emb, -2, 0, length)


def lm_forward(tokens, model: LanguageModel, training: bool = False,
               rng=None) -> Tensor:
    """Logits [..., L, V]; position t depends only on tokens[.. t]."""
    cfg = model.config
    x = embed_tokens(tokens, model.tok_emb, model.pos_emb)
    if cfg.block_kind == "grassmann":
        sched = cfg.schedule()
        for i, blk in enumerate(model.blocks):
            x = grassmann_block_forward(x, blk, sched[i], training=training,
                                        rng=rng, pairing=cfg.pairing)
    else:
        for blk in model.blocks:
            x = attention_block_forward(x, blk, causal=True,
                                        training=training, rng=rng)
    head_w = model.tok_emb if model.head_w is None else model.head_w
    return T.linear(x, head_w, model.head_b)


def param_count(config: ModelConfig) -> tuple[int, dict[str, int]]:
    """Exact learnable-element total with a per-component breakdown."""
    d, dff, v = config.model_dim, config.ffn_dim, config.vocab_size
    breakdown = {
        "token_embedding": v * d,
        "positional_embedding": config.max_len * d,
    }
    if config.block_kind == "grassmann":
        r = config.reduced_dim
        per_layer = ((r * d + r)                     # reduction
                     + (d * num_pairs(r) + d)        # pluecker projection
                     + (d * 2 * d + d)               # gate
                     + (dff * d + dff + d * dff + d)  # ffn
                     + 4 * d)                        # two layer norms
    else:
        per_layer = (4 * (d * d + d)                 # q, k, v, out
                     + (dff * d + dff + d * dff + d)
                     + 4 * d)
    breakdown["blocks_x%d" % config.layers] = per_layer * config.layers
    head = v if config.tie_lm_head else v * d + v
    breakdown["lm_head_tied" if config.tie_lm_head else "lm_head"] = head
    return sum(breakdown.values()), breakdown


def generate(model: LanguageModel, prompt, max_new: int,
             temperature: float = 1.0, seed: int = 0) -> list[int]:
    """Autoregressive continuation; temperature 0 is deterministic argmax."""
    out = [int(t) for t in prompt]
    if not out:
        raise ValueError("prompt must be non-empty")
    rng = np.random.default_rng(seed)
    max_len = model.config.max_len
    for _ in range(max_new):
        ctx = np.asarray(out[-max_len:], dtype=np.int64)
        logits = lm_forward(ctx, model, training=False).data[-1]
        if temperature == 0.0:
            nxt = int(np.argmax(logits))
        else:
            z = logits.astype(np.float64) / temperature
            z -= z.max()
            p = np.exp(z)
            p /= p.sum()
            nxt = int(rng.choice(len(p), p=p))
        out.append(nxt)
    return out


# ---------------------------------------------------------------------------
# canonical text configs and presets

_CONFIG_FIELDS = ("vocab_size", "model_dim", "layers", "max_len",
                  "reduced_dim", "ffn_dim", "heads", "block_kind",
                  "window_schedule", "dropout", "tie_lm_head", "init_std",
                  "pairing", "plucker_eps")


def _schedule_to_text(sched) -> str:
    if isinstance(sched, WindowSchedule):
        sched = sched.per_layer_offsets
    return "|".join(",".join(str(d) for d in offs) for offs in sched)


def _schedule_from_text(text: str) -> list[list[int]]:
    if not text:
        return []
    return [[int(d) for d in part.split(",")] for part in text.split("|")]


def config_to_text(cfg: ModelConfig) -> str:
    """Canonical key=value text; frozen ordering, one field per line."""
    lines = []
    for name in _CONFIG_FIELDS:
        val = getattr(cfg, name)
        if name == "window_schedule":
            val = _schedule_to_text(val)
        elif isinstance(val, bool):
            val = "true" if val else "false"
        elif isinstance(val, float):
            val = repr(val)
        lines.append("%s=%s" % (name, val))
    return "\n".join(lines) + "\n"


def config_from_text(text: str) -> ModelConfig:
    kv = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError("bad config line %r" % line)
        key, val = line.split("=", 1)
        kv[key.strip()] = val.strip()
    unknown = set(kv) - set(_CONFIG_FIELDS)
    if unknown:
        raise ValueError("unknown config keys: %s" % ", ".join(sorted(unknown)))
    args = {}
    ints = {"vocab_size", "model_dim", "layers", "max_len", "reduced_dim",
            "ffn_dim", "heads"}
    floats = {"dropout", "init_std", "plucker_eps"}
    for key, val in kv.items():
        if key in ints:
            args[key] = int(val)
        elif key in floats:
            args[key] = float(val)
        elif key == "tie_lm_head":
            args[key] = val.lower() == "true"
        elif key == "window_schedule":
            args[key] = _schedule_from_text(val)
        else:
            args[key] = val
    return ModelConfig(**args)


_PAPER_SCHEDULE_6 = [[1, 2, 4, 8, 12, 16]] * 6
_PAPER_SCHEDULE_12 = [[d] for d in (1, 1, 2, 2, 4, 4, 8, 8, 12, 12, 16, 16)]

# The four full-vocabulary configurations tie the LM head to the token
# embedding: only the tied counts land near the published totals.
PRESETS: dict[str, ModelConfig] = {
    "grassmann-6x128": ModelConfig(
        vocab_size=30522, model_dim=256, layers=6, max_len=128,
        reduced_dim=32, ffn_dim=1024, block_kind="grassmann",
        window_schedule=_PAPER_SCHEDULE_6, tie_lm_head=True),
    "transformer-6x128": ModelConfig(
        vocab_size=30522, model_dim=256, layers=6, max_len=128,
        ffn_dim=1024, heads=4, block_kind="attention", tie_lm_head=True),
    "grassmann-12x256": ModelConfig(
        vocab_size=30522, model_dim=256, layers=12, max_len=256,
        reduced_dim=32, ffn_dim=1024, block_kind="grassmann",
        window_schedule=_PAPER_SCHEDULE_12, tie_lm_head=True),
    "transformer-12x256": ModelConfig(
        vocab_size=30522, model_dim=256, layers=12, max_len=256,
        ffn_dim=1024, heads=4, block_kind="attention", tie_lm_head=True),
    # desk-scale byte-level configurations for actual training runs
    "grassmann-desk": ModelConfig(
        vocab_size=256, model_dim=128, layers=4, max_len=128,
        reduced_dim=16, ffn_dim=512, block_kind="grassmann",
        window_schedule=[[1, 2, 4, 8]] * 4),
    "transformer-desk": ModelConfig(
        vocab_size=256, model_dim=128, layers=4, max_len=128,
        ffn_dim=512, heads=4, block_kind="attention"),
}


def preset(name: str) -> ModelConfig:
    if name not in PRESETS:
        raise KeyError("unknown preset %r; known: %s"
                       % (name, ", ".join(sorted(PRESETS))))
    return replace(PRESETS[name])
