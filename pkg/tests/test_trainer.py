import math

import numpy as np
import pytest

from grassflow.model import ModelConfig, init_params, named_parameters
from grassflow.tensor import Tensor
from grassflow.trainer import (AdamState, CheckpointError, Corpus,
                               TrainConfig, batch_count, batch_iter,
                               clip_gradients, decode, encode, evaluate,
                               load_checkpoint, load_corpus, optimizer_step,
                               save_checkpoint, train)

from conftest import synth_text


def tiny_model(seed=0, **over):
    base = dict(vocab_size=256, model_dim=16, layers=1, max_len=32,
                reduced_dim=4, ffn_dim=32, block_kind="grassmann",
                window_schedule=[[1, 2]], dropout=0.0)
    base.update(over)
    return init_params(ModelConfig(**base), seed=seed)


class TestTokenizer:
    def test_abc(self):
        assert list(encode("abc")) == [97, 98, 99]

    def test_round_trip(self):
        text = "Hej! åäö ☃\nbytes"
        assert decode(encode(text)) == text

    def test_dtype_and_range(self):
        toks = encode(synth_text(500, seed=1))
        assert toks.dtype == np.uint8
        assert toks.min() >= 0 and toks.max() <= 255


class TestCorpus:
    def test_split_900_100(self, corpus_file):
        corpus = load_corpus(corpus_file(n_bytes=1000), split_fraction=0.9)
        assert len(corpus.train_tokens) == 900
        assert len(corpus.valid_tokens) == 100
        joined = np.concatenate([corpus.train_tokens, corpus.valid_tokens])
        assert np.array_equal(joined, corpus.tokens)

    def test_bad_split(self, corpus_file):
        with pytest.raises(ValueError):
            load_corpus(corpus_file(), split_fraction=1.0)

    def test_tiny_file_rejected(self, tmp_path):
        p = tmp_path / "x.txt"
        p.write_text("a")
        with pytest.raises(ValueError):
            load_corpus(p)


class TestBatches:
    def test_targets_shifted_by_one(self):
        tokens = np.arange(100, dtype=np.uint8)
        for x, y in batch_iter(tokens, block_size=8, batch_size=2, seed=0):
            assert np.array_equal(y, x + 1)
            assert x.shape == (2, 8)

    def test_batch_count_formula(self):
        tokens = np.arange(1000, dtype=np.uint8)
        got = sum(1 for _ in batch_iter(tokens, 16, 4, seed=0))
        assert got == batch_count(1000, 16, 4) == ((999 // 16) // 4)

    def test_chunks_non_overlapping_cover_once(self):
        tokens = np.arange(65, dtype=np.uint8)
        seen = []
        for x, _ in batch_iter(tokens, 8, 2, seed=3):
            seen.extend(x[:, 0].tolist())
        starts = sorted(seen)
        assert starts == sorted(set(starts))          # no chunk twice
        assert all(s % 8 == 0 for s in starts)

    def test_seed_determinism_and_shuffle(self):
        tokens = encode(synth_text(2000, seed=0))
        a = [x.copy() for x, _ in batch_iter(tokens, 16, 2, seed=5)]
        b = [x.copy() for x, _ in batch_iter(tokens, 16, 2, seed=5)]
        c = [x.copy() for x, _ in batch_iter(tokens, 16, 2, seed=6)]
        assert all(np.array_equal(p, q) for p, q in zip(a, b))
        assert any(not np.array_equal(p, q) for p, q in zip(a, c))

    def test_too_short_segment(self):
        with pytest.raises(ValueError):
            list(batch_iter(np.zeros(5, dtype=np.uint8), 8, 1))


class TestAdam:
    def test_zero_grad_no_update(self):
        p = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        p.grad = np.zeros(2)
        before = p.data.copy()
        optimizer_step({"p": p}, AdamState(), 1, TrainConfig())
        assert np.array_equal(p.data, before)

    def test_first_step_is_signed_lr(self):
        # bias correction makes step 1 move by ~lr * sign(g)
        cfg = TrainConfig(learning_rate=0.1)
        p = Tensor(np.array([1.0, 1.0]), requires_grad=True)
        p.grad = np.array([3.0, -0.5])
        optimizer_step({"p": p}, AdamState(), 1, cfg)
        assert np.allclose(p.data, [1.0 - 0.1, 1.0 + 0.1], atol=1e-6)

    def test_quadratic_convergence(self):
        # minimize ||p - target||^2; Adam should get within 1% in 100 steps
        target = np.array([0.3, -0.7, 1.2])
        p = Tensor(np.zeros(3), requires_grad=True)
        cfg = TrainConfig(learning_rate=0.05)
        state = AdamState()
        for t in range(1, 101):
            p.grad = 2 * (p.data - target)
            optimizer_step({"p": p}, state, t, cfg)
        assert np.abs(p.data - target).max() < 0.01 * np.abs(target).max()

    def test_nonfinite_gradient_raises(self):
        p = Tensor(np.ones(2), requires_grad=True)
        p.grad = np.array([1.0, np.nan])
        with pytest.raises(FloatingPointError):
            optimizer_step({"p": p}, AdamState(), 1, TrainConfig())

    def test_bad_betas(self):
        with pytest.raises(ValueError):
            TrainConfig(beta1=1.0)


class TestClip:
    def test_below_threshold_untouched(self):
        p = Tensor(np.zeros(3), requires_grad=True)
        p.grad = np.array([0.1, 0.2, 0.2])
        norm = clip_gradients({"p": p}, 1.0)
        assert norm == pytest.approx(0.3)
        assert np.array_equal(p.grad, [0.1, 0.2, 0.2])

    def test_above_threshold_scaled_to_max(self):
        rng = np.random.default_rng(0)
        params = {}
        for i in range(3):
            p = Tensor(np.zeros(4), requires_grad=True)
            p.grad = rng.normal(0, 5.0, size=4)
            params[str(i)] = p
        pre = math.sqrt(sum(float((p.grad ** 2).sum())
                            for p in params.values()))
        returned = clip_gradients(params, 1.0)
        post = math.sqrt(sum(float((p.grad ** 2).sum())
                             for p in params.values()))
        assert returned == pytest.approx(pre)
        assert post == pytest.approx(1.0, rel=1e-9)

    def test_direction_preserved(self):
        p = Tensor(np.zeros(2), requires_grad=True)
        p.grad = np.array([30.0, 40.0])
        clip_gradients({"p": p}, 1.0)
        assert np.allclose(p.grad, [0.6, 0.8])


class TestEvaluate:
    def test_batch_size_invariance(self, corpus_file):
        corpus = load_corpus(corpus_file(n_bytes=4000))
        model = tiny_model()
        a = evaluate(model, corpus.valid_tokens, block_size=16, batch_size=1)
        b = evaluate(model, corpus.valid_tokens, block_size=16, batch_size=7)
        assert abs(a - b) / a < 1e-6

    def test_untrained_near_uniform(self, corpus_file):
        corpus = load_corpus(corpus_file(n_bytes=4000))
        ppl = evaluate(tiny_model(), corpus.valid_tokens, block_size=16)
        assert abs(ppl - 256.0) / 256.0 < 0.20

    def test_too_short(self):
        with pytest.raises(ValueError):
            evaluate(tiny_model(), np.zeros(5, dtype=np.uint8), 32)


class TestTrainLoop:
    def test_zero_epochs(self, corpus_file, tmp_path):
        corpus = load_corpus(corpus_file(n_bytes=2000))
        result = train(tiny_model(), corpus, TrainConfig(
            block_size=16, batch_size=4, epochs=0), tmp_path / "run")
        assert result.log == []
        assert (tmp_path / "run" / "best.ckpt").exists()

    def test_memorizes_repeating_pattern(self, tmp_path):
        # a trivially predictable stream: loss must collapse
        text = "abcdefgh" * 400
        corpus = Corpus(encode(text), split_fraction=0.9)
        model = tiny_model(seed=1)
        cfg = TrainConfig(block_size=16, batch_size=8, epochs=8,
                          learning_rate=3e-3, seed=0)
        result = train(model, corpus, cfg, tmp_path / "run")
        first, last = result.log[0], result.log[-1]
        assert last.train_loss < 0.1 * first.train_loss
        assert result.best_val_ppl < 2.0

    def test_log_line_format(self, corpus_file, tmp_path):
        corpus = load_corpus(corpus_file(n_bytes=3000))
        result = train(tiny_model(), corpus, TrainConfig(
            block_size=16, batch_size=4, epochs=2), tmp_path / "run")
        lines = (tmp_path / "run" / "train_log.txt").read_text().splitlines()
        assert len(lines) == 2
        for i, line in enumerate(lines, start=1):
            parts = [s.strip() for s in line.split(",")]
            assert int(parts[0]) == i
            float(parts[1]), float(parts[2]), float(parts[3])

    def test_deterministic_given_seed(self, corpus_file, tmp_path):
        corpus = load_corpus(corpus_file(n_bytes=2000))
        cfg = TrainConfig(block_size=16, batch_size=4, epochs=1, seed=11)
        r1 = train(tiny_model(seed=2), corpus, cfg, tmp_path / "a")
        r2 = train(tiny_model(seed=2), corpus, cfg, tmp_path / "b")
        assert r1.log[0].train_loss == r2.log[0].train_loss
        assert r1.best_val_ppl == r2.best_val_ppl


class TestCheckpoints:
    def test_round_trip_bit_exact(self, tmp_path):
        model = tiny_model(seed=7)
        path = tmp_path / "m.ckpt"
        save_checkpoint(model, path)
        loaded = load_checkpoint(path)
        a, b = named_parameters(model), named_parameters(loaded)
        assert set(a) == set(b)
        for name in a:
            assert a[name].data.dtype == b[name].data.dtype
            assert np.array_equal(a[name].data, b[name].data), name
        assert loaded.config == model.config

    def test_attention_round_trip(self, tmp_path):
        model = tiny_model(block_kind="attention", heads=4,
                           window_schedule=[])
        path = tmp_path / "m.ckpt"
        save_checkpoint(model, path)
        loaded = load_checkpoint(path)
        assert np.array_equal(loaded.tok_emb.data, model.tok_emb.data)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "m.ckpt"
        path.write_bytes(b"NOPE" + b"\x00" * 64)
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_truncated(self, tmp_path):
        model = tiny_model()
        path = tmp_path / "m.ckpt"
        save_checkpoint(model, path)
        blob = path.read_bytes()
        path.write_bytes(blob[:len(blob) // 2])
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_config_mismatch_names_tensor(self, tmp_path):
        model = tiny_model()
        path = tmp_path / "m.ckpt"
        save_checkpoint(model, path)
        other = tiny_model(model_dim=24, reduced_dim=6).config
        with pytest.raises(CheckpointError, match="embed.tok"):
            load_checkpoint(path, config=other)

    def test_matching_config_accepted(self, tmp_path):
        model = tiny_model(seed=3)
        path = tmp_path / "m.ckpt"
        save_checkpoint(model, path)
        loaded = load_checkpoint(path, config=model.config)
        assert np.array_equal(loaded.pos_emb.data, model.pos_emb.data)
