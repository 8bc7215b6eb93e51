"""Runtime scaling of the two mixing mechanisms across sequence lengths.

Times only the mixing kernels (no FFN, no gradient recording): for the
Grassmann path reduce + pair + minors + normalize + aggregate + project, for
the attention path the score matrix, causal softmax, and value mixing. The
shared feed-forward cost would otherwise mask the asymptotic difference, which
lives entirely in the mixing term (linear vs quadratic in L).
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from .geometry import minors_np, normalize_np

MECHANISMS = ("grassmann-mix", "attention-scores")


def _grassmann_kernel(h, w_red, b_red, w_plu, b_plu, offsets, eps=1e-6):
    length = h.shape[0]
    z = h @ w_red.T + b_red
    acc = np.zeros((length, w_plu.shape[1]), dtype=h.dtype)
    counts = np.zeros((length, 1), dtype=h.dtype)
    for delta in offsets:
        if delta >= length:
            continue
        phat = normalize_np(minors_np(z[:length - delta], z[delta:]), eps)
        acc[delta:] += phat
        counts[delta:] += 1
    mean = acc / np.maximum(counts, 1.0)
    return (mean @ w_plu.T + b_plu) * (counts > 0)


def _attention_kernel(h, w_q, w_k, w_v, mask):
    q = h @ w_q.T
    k = h @ w_k.T
    v = h @ w_v.T
    scores = q @ k.T / np.sqrt(h.shape[1]) + mask
    scores -= scores.max(axis=-1, keepdims=True)
    e = np.exp(scores)
    a = e / e.sum(axis=-1, keepdims=True)
    return a @ v


def time_mixing(mechanism: str, length: int, d: int, r: int, offsets,
                repeats: int = 5, seed: int = 0) -> float:
    """Median wall time of one forward mixing pass (2 warm-ups first).

    All inputs are allocated before the clock starts. Returns seconds; raises
    MemoryError only if even allocation fails (callers may skip the row).
    """
    if mechanism not in MECHANISMS:
        raise ValueError("unknown mechanism %r" % mechanism)
    if repeats < 5:
        raise ValueError("need at least 5 repeats")
    rng = np.random.default_rng(seed)
    h = rng.standard_normal((length, d)).astype(np.float32)
    if mechanism == "grassmann-mix":
        w_red = rng.standard_normal((r, d)).astype(np.float32) * 0.02
        b_red = np.zeros(r, dtype=np.float32)
        n_pairs = r * (r - 1) // 2
        w_plu = rng.standard_normal((d, n_pairs)).astype(np.float32) * 0.02
        b_plu = np.zeros(d, dtype=np.float32)

        def run():
            _grassmann_kernel(h, w_red, b_red, w_plu, b_plu, offsets)
    else:
        w_q = rng.standard_normal((d, d)).astype(np.float32) * 0.02
        w_k = rng.standard_normal((d, d)).astype(np.float32) * 0.02
        w_v = rng.standard_normal((d, d)).astype(np.float32) * 0.02
        mask = np.triu(np.full((length, length), -1e9, dtype=np.float32), k=1)

        def run():
            _attention_kernel(h, w_q, w_k, w_v, mask)

    run()
    run()
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        run()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


@dataclass
class BenchRow:
    mechanism: str
    length: int
    d: int
    r: int
    m: int
    repeats: int
    median_seconds: float


@dataclass
class BenchReport:
    rows: list[BenchRow] = field(default_factory=list)
    skipped: list[tuple[str, int]] = field(default_factory=list)

    def times(self, mechanism: str) -> dict[int, float]:
        return {row.length: row.median_seconds for row in self.rows
                if row.mechanism == mechanism}

    def doubling_ratios(self, mechanism: str) -> list[tuple[int, int, float]]:
        """(L, 2L, time(2L)/time(L)) for adjacent doubled lengths."""
        t = self.times(mechanism)
        out = []
        for length in sorted(t):
            if 2 * length in t:
                out.append((length, 2 * length, t[2 * length] / t[length]))
        return out


def scaling_report(lengths, d: int = 64, r: int = 16,
                   offsets=(1, 2, 4, 8, 12, 16), repeats: int = 5,
                   seed: int = 0, out_path=None) -> BenchReport:
    """Time both mechanisms over a grid of lengths; optionally write CSV."""
    lengths = list(lengths)
    if any(b <= a for a, b in zip(lengths, lengths[1:])):
        raise ValueError("lengths must be strictly increasing")
    report = BenchReport()
    for mechanism in MECHANISMS:
        for length in lengths:
            try:
                med = time_mixing(mechanism, length, d, r, offsets,
                                  repeats=repeats, seed=seed)
            except MemoryError:
                report.skipped.append((mechanism, length))
                continue
            report.rows.append(BenchRow(mechanism, length, d, r,
                                        len(set(offsets)), repeats, med))
    report.rows.sort(key=lambda row: (row.mechanism, row.length))
    if out_path is not None:
        write_csv(report, out_path)
    return report


def write_csv(report: BenchReport, path):
    """Two sections: raw rows, then doubling ratios."""
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["mechanism", "L", "d", "r", "m", "repeats",
                      "median_seconds"])
        for row in report.rows:
            out.writerow([row.mechanism, row.length, row.d, row.r, row.m,
                          row.repeats, "%.9f" % row.median_seconds])
        out.writerow([])
        out.writerow(["mechanism", "L_from", "L_to", "ratio"])
        for mechanism in MECHANISMS:
            for lo, hi, ratio in report.doubling_ratios(mechanism):
                out.writerow([mechanism, lo, hi, "%.4f" % ratio])
