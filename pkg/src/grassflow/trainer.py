"""Desk-scale training: byte corpus, batching, Adam, evaluation, checkpoints.

The tokenizer is byte-level (vocabulary 256): a UTF-8 file is its own token
stream, and decode(encode(x)) round-trips exactly. Checkpoints are a small
self-describing binary format (magic "GRFL") with the canonical-text model
config embedded, so loading needs no side files.
"""

from __future__ import annotations

import struct
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import (LanguageModel, config_from_text, config_to_text,
                    init_params, lm_forward, named_parameters)
from .tensor import cross_entropy

VOCAB_SIZE = 256

CKPT_MAGIC = b"GRFL"
CKPT_VERSION = 1
_DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}


class CheckpointError(ValueError):
    pass


# ---------------------------------------------------------------------------
# corpus

@dataclass
class Corpus:
    tokens: np.ndarray            # uint8 byte values
    split_fraction: float

    @property
    def train_tokens(self) -> np.ndarray:
        cut = int(len(self.tokens) * self.split_fraction)
        return self.tokens[:cut]

    @property
    def valid_tokens(self) -> np.ndarray:
        cut = int(len(self.tokens) * self.split_fraction)
        return self.tokens[cut:]


def encode(text: str) -> np.ndarray:
    return np.frombuffer(text.encode("utf-8"), dtype=np.uint8).copy()


def decode(tokens) -> str:
    return bytes(int(t) for t in tokens).decode("utf-8")


def load_corpus(path, split_fraction: float = 0.9) -> Corpus:
    data = Path(path).read_bytes()
    if len(data) < 2:
        raise ValueError("corpus file %s is too small (%d bytes)"
                         % (path, len(data)))
    if not 0.0 < split_fraction < 1.0:
        raise ValueError("split fraction must be in (0, 1)")
    return Corpus(np.frombuffer(data, dtype=np.uint8).copy(), split_fraction)


def batch_count(segment_len: int, block_size: int, batch_size: int) -> int:
    return ((segment_len - 1) // block_size) // batch_size


def batch_iter(tokens: np.ndarray, block_size: int, batch_size: int,
               seed: int = 0):
    """Yield (inputs [B, L], targets [B, L]) over non-overlapping chunks.

    targets[b, t] == inputs[b, t + 1] in the source stream. Chunk order is
    shuffled deterministically by seed; each chunk appears at most once per
    epoch and a trailing partial batch is dropped.
    """
    n_chunks = (len(tokens) - 1) // block_size
    if n_chunks < 1:
        raise ValueError("segment of %d tokens too short for block size %d"
                         % (len(tokens), block_size))
    starts = np.arange(n_chunks) * block_size
    rng = np.random.default_rng(seed)
    rng.shuffle(starts)
    data = tokens.astype(np.int64)
    for b in range(n_chunks // batch_size):
        batch = starts[b * batch_size:(b + 1) * batch_size]
        x = np.stack([data[s:s + block_size] for s in batch])
        y = np.stack([data[s + 1:s + block_size + 1] for s in batch])
        yield x, y


# ---------------------------------------------------------------------------
# optimization

@dataclass
class TrainConfig:
    block_size: int = 128
    batch_size: int = 16
    epochs: int = 3
    learning_rate: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    clip_norm: float = 1.0
    seed: int = 0
    eval_interval: int = 1

    def __post_init__(self):
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ValueError("Adam betas must lie in (0, 1)")
        for name in ("block_size", "batch_size", "learning_rate",
                     "eps_adam", "clip_norm", "eval_interval"):
            if getattr(self, name) <= 0:
                raise ValueError("%s must be positive" % name)


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def clip_gradients(params: dict, max_norm: float) -> float:
    """Scale all grads so the global L2 norm is at most max_norm.

    Returns the pre-clip global norm.
    """
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            total += float((p.grad.astype(np.float64) ** 2).sum())
    norm = float(np.sqrt(total))
    if norm > max_norm:
        factor = max_norm / norm
        for p in params.values():
            if p.grad is not None:
                p.grad = p.grad * factor
    return norm


def optimizer_step(params: dict, state: AdamState, t: int,
                   config: TrainConfig):
    """One bias-corrected Adam update; t is the 1-based step index."""
    lr, b1, b2 = config.learning_rate, config.beta1, config.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = p.grad
        if g is None:
            continue
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("non-finite gradient for %r" % name)
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m = state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        v = state.v[name] = b2 * state.v[name] + (1.0 - b2) * g * g
        p.data -= (lr * (m / c1) / (np.sqrt(v / c2) + config.eps_adam)
                   ).astype(p.data.dtype)


# ---------------------------------------------------------------------------
# evaluation and training loop

def evaluate(model: LanguageModel, tokens: np.ndarray, block_size: int,
             batch_size: int = 16) -> float:
    """Perplexity: exp of the token-weighted mean cross-entropy.

    Deterministic and invariant to batch size (full chunks only, sequential
    order).
    """
    n_chunks = (len(tokens) - 1) // block_size
    if n_chunks < 1:
        raise ValueError("segment too short to evaluate at block size %d"
                         % block_size)
    data = tokens.astype(np.int64)
    loss_sum = 0.0
    count = 0
    for b0 in range(0, n_chunks, batch_size):
        starts = np.arange(b0, min(b0 + batch_size, n_chunks)) * block_size
        x = np.stack([data[s:s + block_size] for s in starts])
        y = np.stack([data[s + 1:s + block_size + 1] for s in starts])
        loss = cross_entropy(lm_forward(x, model, training=False), y)
        loss_sum += float(loss.data) * y.size
        count += y.size
    return float(np.exp(loss_sum / count))


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_ppl: float
    seconds: float

    def line(self) -> str:
        return "%d, %.6f, %.6f, %.3f" % (self.epoch, self.train_loss,
                                         self.val_ppl, self.seconds)


@dataclass
class TrainResult:
    log: list[EpochRecord]
    best_ckpt: str
    best_val_ppl: float
    log_path: str


def train(model: LanguageModel, corpus: Corpus, config: TrainConfig,
          out_dir) -> TrainResult:
    """Train with Adam, logging one line per epoch and keeping the checkpoint
    with the best validation perplexity."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt_path = out_dir / "best.ckpt"
    log_path = out_dir / "train_log.txt"

    params = named_parameters(model)
    state = AdamState()
    records: list[EpochRecord] = []
    best = float("inf")
    step = 0

    save_checkpoint(model, ckpt_path)  # initial weights; replaced on improvement
    if config.epochs == 0:
        log_path.write_text("")
        return TrainResult([], str(ckpt_path), best, str(log_path))

    val_ppl = float("nan")
    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        losses = []
        for x, y in batch_iter(corpus.train_tokens, config.block_size,
                               config.batch_size, seed=config.seed + epoch):
            step += 1
            rng = np.random.default_rng([config.seed, epoch, step])
            loss = cross_entropy(lm_forward(x, model, training=True, rng=rng), y)
            for p in params.values():
                p.zero_grad()
            loss.backward()
            clip_gradients(params, config.clip_norm)
            optimizer_step(params, state, step, config)
            losses.append(float(loss.data))
        if epoch % config.eval_interval == 0 or epoch == config.epochs:
            val_ppl = evaluate(model, corpus.valid_tokens, config.block_size,
                               config.batch_size)
        record = EpochRecord(epoch, float(np.mean(losses)), val_ppl,
                             time.perf_counter() - t0)
        records.append(record)
        if val_ppl < best:
            best = val_ppl
            save_checkpoint(model, ckpt_path)

    log_path.write_text("\n".join(r.line() for r in records) + "\n")
    return TrainResult(records, str(ckpt_path), best, str(log_path))


# ---------------------------------------------------------------------------
# checkpoints

def save_checkpoint(model: LanguageModel, path):
    """Binary layout (all integers little-endian):

    magic "GRFL" | u32 version | u64 config length | config text |
    u32 tensor count | per tensor: u16 name len, name, u8 dtype code,
    u8 ndim, ndim x u64 dims, u64 data offset | raw tensor data.
    """
    params = named_parameters(model)
    cfg_text = config_to_text(model.config).encode("utf-8")
    table = bytearray()
    blob = bytearray()
    table += struct.pack("<I", len(params))
    for name, p in params.items():
        arr = np.ascontiguousarray(p.data)
        if arr.dtype.byteorder == ">":
            arr = arr.astype(arr.dtype.newbyteorder("<"))
        nb = name.encode("utf-8")
        table += struct.pack("<H", len(nb)) + nb
        table += struct.pack("<BB", _DTYPE_CODES[arr.dtype], arr.ndim)
        table += struct.pack("<%dQ" % arr.ndim, *arr.shape)
        table += struct.pack("<Q", len(blob))
        blob += arr.tobytes()
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<I", CKPT_VERSION))
        fh.write(struct.pack("<Q", len(cfg_text)))
        fh.write(cfg_text)
        fh.write(table)
        fh.write(blob)


def _read(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise CheckpointError("truncated checkpoint while reading %s" % what)
    return data


def load_checkpoint(path, config=None) -> LanguageModel:
    """Rebuild a model from a checkpoint, bit-exactly.

    If ``config`` is given it must match the embedded one; a shape conflict is
    reported with the offending tensor name.
    """
    with open(path, "rb") as fh:
        if _read(fh, 4, "magic") != CKPT_MAGIC:
            raise CheckpointError("bad magic; not a GRFL checkpoint: %s" % path)
        (version,) = struct.unpack("<I", _read(fh, 4, "version"))
        if version != CKPT_VERSION:
            raise CheckpointError("unsupported checkpoint version %d" % version)
        (cfg_len,) = struct.unpack("<Q", _read(fh, 8, "config length"))
        cfg_text = _read(fh, cfg_len, "config").decode("utf-8")
        stored_cfg = config_from_text(cfg_text)
        (count,) = struct.unpack("<I", _read(fh, 4, "tensor count"))
        entries = []
        for _ in range(count):
            (name_len,) = struct.unpack("<H", _read(fh, 2, "name length"))
            name = _read(fh, name_len, "name").decode("utf-8")
            code, ndim = struct.unpack("<BB", _read(fh, 2, "dtype/ndim"))
            if code not in _CODE_DTYPES:
                raise CheckpointError("unknown dtype code %d for %r"
                                      % (code, name))
            shape = struct.unpack("<%dQ" % ndim, _read(fh, 8 * ndim, "shape"))
            (offset,) = struct.unpack("<Q", _read(fh, 8, "offset"))
            entries.append((name, _CODE_DTYPES[code], shape, offset))
        blob = fh.read()

    model = init_params(stored_cfg, seed=0)
    params = named_parameters(model)
    if config is not None:
        want = named_parameters(init_params(config, seed=0))
        stored = {name: shape for name, _, shape, _ in entries}
        for name, p in want.items():
            if name not in stored:
                raise CheckpointError("checkpoint is missing tensor %r" % name)
            if tuple(stored[name]) != p.data.shape:
                raise CheckpointError(
                    "shape mismatch for tensor %r: checkpoint %r vs config %r"
                    % (name, tuple(stored[name]), p.data.shape))
        for name in stored:
            if name not in want:
                raise CheckpointError("unexpected tensor %r in checkpoint" % name)

    if set(n for n, _, _, _ in entries) != set(params):
        raise CheckpointError("checkpoint tensor names do not match config")
    for name, dtype, shape, offset in entries:
        n = int(np.prod(shape)) if shape else 1
        end = offset + n * dtype.itemsize
        if end > len(blob):
            raise CheckpointError("truncated data for tensor %r" % name)
        arr = np.frombuffer(blob, dtype=dtype.newbyteorder("<"),
                            count=n, offset=offset)
        arr = arr.astype(dtype).reshape(shape)
        if params[name].data.shape != arr.shape:
            raise CheckpointError("shape mismatch for tensor %r" % name)
        params[name].data = arr.copy()
    return model
