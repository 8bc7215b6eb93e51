"""Grassmann/Pluecker primitives for 2-dimensional subspaces of R^r.

A 2-plane spanned by vectors u, v in R^r is encoded by the vector of all
2x2 minors

    p_ij = u_i v_j - u_j v_i,   1 <= i < j <= r,

laid out lexicographically by (i, j). The encoding is defined up to overall
scale (two bases of the same plane give proportional vectors), is zero exactly
when u and v are linearly dependent, and for r = 4 satisfies the single
quadratic relation p12 p34 - p13 p24 + p14 p23 = 0.

All functions here are stateless; the embedding and normalization are
differentiable and operate on Tensors (batched over leading axes), with plain
numpy kernels exposed for gradient-free callers such as the benchmark.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from .tensor import Tensor, _node


def num_pairs(r: int) -> int:
    """C(r, 2): the coordinate dimension for ambient dimension r."""
    return r * (r - 1) // 2


@lru_cache(maxsize=None)
def pair_indices(r: int) -> tuple[np.ndarray, np.ndarray]:
    """0-based (i, j) index arrays for all pairs i < j, lexicographic order."""
    if r < 2:
        raise ValueError("ambient dimension must be >= 2, got %d" % r)
    return np.triu_indices(r, k=1)


def pair_index(i: int, j: int, r: int) -> int:
    """Flat position of the 1-based pair (i, j), i < j, in the coordinate order."""
    if not (1 <= i < j <= r):
        raise ValueError("need 1 <= i < j <= r, got (i=%d, j=%d, r=%d)"
                         % (i, j, r))
    # pairs with first index < i come first, then (i, i+1) .. (i, j)
    return (i - 1) * (2 * r - i) // 2 + (j - i - 1)


def minors_np(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """All 2x2 minors of [..., r] vector pairs, shape [..., C(r,2)].

    Computed a first-index block at a time: the coordinates for fixed i are
    the contiguous slice (i, i+1), ..., (i, r-1), which keeps the gathers
    contiguous (measurably faster than fancy indexing at long L).
    """
    r = u.shape[-1]
    out = np.empty(u.shape[:-1] + (num_pairs(r),),
                   dtype=np.result_type(u, v))
    col = 0
    for i in range(r - 1):
        width = r - 1 - i
        out[..., col:col + width] = (u[..., i:i + 1] * v[..., i + 1:]
                                     - u[..., i + 1:] * v[..., i:i + 1])
        col += width
    return out


def plucker_embed(u: Tensor, v: Tensor) -> Tensor:
    """Differentiable Pluecker embedding of the plane spanned by (u, v).

    Accepts [..., r] tensors with matching shapes; returns [..., C(r,2)].
    """
    r = u.data.shape[-1]
    if r < 2:
        raise ValueError("ambient dimension must be >= 2, got %d" % r)
    if u.data.shape != v.data.shape:
        raise ValueError("u and v shapes differ: %r vs %r"
                         % (u.data.shape, v.data.shape))
    iu, ju = pair_indices(r)
    data = minors_np(u.data, v.data)

    def bwd(g):
        # lift the coordinate gradient to an antisymmetric matrix M with
        # M[i, j] = g_(i,j) for i < j; then d/du = M v, d/dv = M^T u
        m = np.zeros(g.shape[:-1] + (r, r), dtype=g.dtype)
        m[..., iu, ju] = g
        m[..., ju, iu] = -g
        gu = np.einsum("...ij,...j->...i", m, v.data)
        gv = np.einsum("...ij,...i->...j", m, u.data)
        return [(u, gu), (v, gv)]

    return _node(data, "plucker_embed", (u, v), bwd)


def normalize_np(p: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """p / max(||p||_2, eps) over the last axis (numpy kernel)."""
    n = np.linalg.norm(p, axis=-1, keepdims=True)
    return p / np.maximum(n, eps)


def plucker_normalize(p: Tensor, eps: float = 1e-6) -> Tensor:
    """Differentiable p / max(||p||_2, eps) over the last axis.

    At the branch point ||p|| == eps the gradient of the norm branch is used.
    """
    if eps <= 0:
        raise ValueError("eps must be positive, got %r" % eps)
    n = np.linalg.norm(p.data, axis=-1, keepdims=True)
    denom = np.maximum(n, eps)
    out = p.data / denom

    def bwd(g):
        on_norm = n >= eps
        dot = (g * out).sum(axis=-1, keepdims=True)
        safe_n = np.where(on_norm, n, 1.0)
        gp_norm = (g - out * dot) / safe_n
        return [(p, np.where(on_norm, gp_norm, g / eps))]

    return _node(out, "plucker_normalize", (p,), bwd)


def plucker_relation_residual(p) -> np.ndarray | float:
    """Gr(2,4) quadratic residual p12 p34 - p13 p24 + p14 p23.

    Zero (up to roundoff) exactly for decomposable vectors. Accepts a Tensor
    or array with last axis of length C(4,2) = 6; returns a float for a single
    vector, an array for a batch.
    """
    arr = p.data if isinstance(p, Tensor) else np.asarray(p)
    if arr.shape[-1] != 6:
        raise ValueError("residual is defined for r = 4 (6 coordinates), "
                         "got last axis %d" % arr.shape[-1])
    res = (arr[..., 0] * arr[..., 5]
           - arr[..., 1] * arr[..., 4]
           + arr[..., 2] * arr[..., 3])
    return float(res) if res.ndim == 0 else res
