"""Self-check suites behind the ``check`` CLI subcommand.

Each suite returns (name, passed, detail) triples; the CLI prints them and
maps any failure to exit code 3. The same properties are exercised more
exhaustively by the test suite; these runs are sized to finish in seconds.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .blocks import grassmann_block_forward
from .geometry import (minors_np, normalize_np, plucker_embed,
                       plucker_relation_residual)
from .model import ModelConfig, init_params, lm_forward
from .tensor import Tensor, grad_check


def _rand_block(rng, d=8, r=4, dff=16, dtype=np.float64):
    from .blocks import GrassmannBlockParams

    def w(*shape):
        return Tensor(rng.normal(0, 0.5, shape).astype(dtype),
                      requires_grad=True)

    n_pairs = r * (r - 1) // 2
    return GrassmannBlockParams(
        reduce_w=w(r, d), reduce_b=w(r), plucker_w=w(d, n_pairs),
        plucker_b=w(d), gate_w=w(d, 2 * d), gate_b=w(d),
        ffn_w1=w(dff, d), ffn_b1=w(dff), ffn_w2=w(d, dff), ffn_b2=w(d),
        norm1_g=w(d), norm1_b=w(d), norm2_g=w(d), norm2_b=w(d),
        dropout=0.0)


def run_gradcheck_suite(seed: int = 0, tol: float = 1e-5):
    rng = np.random.default_rng(seed)
    results = []

    def leaf(*shape):
        return Tensor(rng.normal(0, 1, shape), requires_grad=True)

    cases = {
        "matmul": lambda a=leaf(3, 4), b=leaf(4, 2):
            (lambda: T.tsum(T.matmul(a, b) * T.matmul(a, b)), [a, b]),
        "linear": lambda x=leaf(5, 3), w=leaf(4, 3), b=leaf(4):
            (lambda: T.tsum(T.gelu(T.linear(x, w, b))), [x, w, b]),
        "softmax": lambda x=leaf(4, 6):
            (lambda: T.tsum(T.softmax(x) * T.sigmoid(x)), [x]),
        "layer_norm": lambda x=leaf(3, 8), g=leaf(8), b=leaf(8):
            (lambda: T.tsum(T.layer_norm(x, g, b)
                            * T.layer_norm(x, g, b)), [x, g, b]),
        "cross_entropy": lambda x=leaf(6, 5):
            (lambda: T.cross_entropy(x, np.arange(6) % 5), [x]),
        "plucker": lambda u=leaf(7, 5), v=leaf(7, 5):
            (lambda: T.tsum(T.gelu(plucker_embed(u, v))), [u, v]),
    }
    for name, case in cases.items():
        f, leaves = case()
        err = grad_check(f, leaves, h=1e-5)
        results.append(("gradcheck/%s" % name, err <= tol,
                        "max rel err %.2e" % err))

    h = leaf(5, 8)
    params = _rand_block(rng)
    leaves = [h, params.reduce_w, params.plucker_w, params.gate_w,
              params.ffn_w1, params.norm1_g]
    err = grad_check(lambda: T.tsum(T.sigmoid(
        grassmann_block_forward(h, params, [1, 2, 4]))), leaves, h=1e-5)
    results.append(("gradcheck/grassmann_block", err <= tol,
                    "max rel err %.2e" % err))
    return results


def run_geometry_suite(trials: int = 1000, seed: int = 0):
    rng = np.random.default_rng(seed)
    results = []
    r = 4
    u = rng.normal(0, 1, (trials, r))
    v = rng.normal(0, 1, (trials, r))
    a, b, c, d = rng.normal(0, 1, (4, trials, 1))

    lhs = minors_np(a * u + b * v, c * u + d * v)
    rhs = (a * d - b * c) * minors_np(u, v)
    err = np.abs(lhs - rhs).max()
    results.append(("geometry/bilinearity", err <= 1e-9, "max err %.2e" % err))

    anti = np.abs(minors_np(v, u) + minors_np(u, v)).max()
    results.append(("geometry/antisymmetry", anti == 0.0, "max err %.2e" % anti))

    p2 = normalize_np(minors_np(a * u + b * v, c * u + d * v))
    p1 = normalize_np(minors_np(u, v))
    sign = np.sign(a * d - b * c)
    proj = np.abs(p2 - sign * p1).max()
    results.append(("geometry/projective", proj <= 1e-6, "max err %.2e" % proj))

    res = np.abs(plucker_relation_residual(minors_np(u, v))).max()
    results.append(("geometry/relation_residual", res <= 1e-10,
                    "max residual %.2e" % res))

    dep = np.abs(minors_np(u, 3.0 * u)).max()
    results.append(("geometry/dependent_zero", dep <= 1e-12,
                    "max norm %.2e" % dep))
    return results


def _causality_violations(config: ModelConfig, seed: int = 0) -> int:
    """Count positions whose logits change at some t < s when token s flips."""
    model = init_params(config, seed=seed)
    rng = np.random.default_rng(seed + 1)
    length = 32
    tokens = rng.integers(0, config.vocab_size, length)
    base = lm_forward(tokens, model, training=False).data
    violations = 0
    for s in range(1, length):
        mod = tokens.copy()
        mod[s] = (mod[s] + 1) % config.vocab_size
        out = lm_forward(mod, model, training=False).data
        if not np.array_equal(base[:s], out[:s]):
            violations += 1
    return violations


def run_causality_suite(seed: int = 0):
    results = []
    common = dict(vocab_size=64, model_dim=64, layers=2, max_len=32,
                  dropout=0.0)
    gr = ModelConfig(reduced_dim=8, block_kind="grassmann",
                     window_schedule=[[1, 2, 4, 8]] * 2, **common)
    at = ModelConfig(block_kind="attention", heads=4, **common)
    fw = ModelConfig(reduced_dim=8, block_kind="grassmann",
                     window_schedule=[[1, 2, 4, 8]] * 2, pairing="forward",
                     **common)
    for name, cfg, expect_causal in (("grassmann", gr, True),
                                     ("attention", at, True),
                                     ("forward-pairing-leaks", fw, False)):
        bad = _causality_violations(cfg, seed=seed)
        ok = (bad == 0) if expect_causal else (bad > 0)
        results.append(("causality/%s" % name, ok,
                        "%d leaking positions" % bad))
    return results


def run_all(which=("gradcheck", "geometry", "causality")):
    results = []
    if "gradcheck" in which:
        results += run_gradcheck_suite()
    if "geometry" in which:
        results += run_geometry_suite()
    if "causality" in which:
        results += run_causality_suite()
    return results
