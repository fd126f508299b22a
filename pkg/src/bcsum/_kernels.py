"""Hot inner loops, compiled with numba when available.

Set ``BCS_DISABLE_NUMBA=1`` to force the pure-numpy/python path. Both paths are
importable directly (``numba_impl`` / ``numpy_impl``) for tests and benchmarks.
"""
import os
from types import SimpleNamespace

import numpy as np

try:
    import numba
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("BCS_DISABLE_NUMBA", "0") not in ("1", "true", "yes")


# ---------------------------------------------------------------- numpy path

def _np_gather_last(x, idx):
    # x: (N, L, R), idx: (L, K) -> (N, L, K)
    return np.take_along_axis(x, np.broadcast_to(idx, (x.shape[0],) + idx.shape), axis=2)


def _np_scatter_last(src, idx, width):
    # src: (N, L, K), idx: (L, K) -> (N, L, width), summing collisions
    onehot = (idx[:, :, None] == np.arange(width)[None, None, :]).astype(src.dtype)
    return np.einsum("nlk,lkr->nlr", src, onehot)


def _np_lcs_length(a, b):
    n, m = len(a), len(b)
    if n == 0 or m == 0:
        return 0
    prev = np.zeros(m + 1, dtype=np.int64)
    for i in range(n):
        cur = np.zeros(m + 1, dtype=np.int64)
        ai = a[i]
        for j in range(m):
            if ai == b[j]:
                cur[j + 1] = prev[j] + 1
            else:
                cur[j + 1] = cur[j] if cur[j] > prev[j + 1] else prev[j + 1]
        prev = cur
    return int(prev[m])


numpy_impl = SimpleNamespace(
    gather_last=_np_gather_last,
    scatter_last=_np_scatter_last,
    lcs_length=_np_lcs_length,
)


# ---------------------------------------------------------------- numba path

if HAVE_NUMBA:

    @numba.njit(cache=True)
    def _nb_gather_last(x, idx):
        n, l, _ = x.shape
        k = idx.shape[1]
        out = np.empty((n, l, k), dtype=x.dtype)
        for a in range(n):
            for i in range(l):
                for j in range(k):
                    out[a, i, j] = x[a, i, idx[i, j]]
        return out

    @numba.njit(cache=True)
    def _nb_scatter_last(src, idx, width):
        n, l, k = src.shape
        out = np.zeros((n, l, width), dtype=src.dtype)
        for a in range(n):
            for i in range(l):
                for j in range(k):
                    out[a, i, idx[i, j]] += src[a, i, j]
        return out

    @numba.njit(cache=True)
    def _nb_lcs_length(a, b):
        n, m = a.shape[0], b.shape[0]
        if n == 0 or m == 0:
            return 0
        prev = np.zeros(m + 1, dtype=np.int64)
        cur = np.zeros(m + 1, dtype=np.int64)
        for i in range(n):
            cur[0] = 0
            for j in range(m):
                if a[i] == b[j]:
                    cur[j + 1] = prev[j] + 1
                elif cur[j] > prev[j + 1]:
                    cur[j + 1] = cur[j]
                else:
                    cur[j + 1] = prev[j + 1]
            prev, cur = cur, prev
        return prev[m]

    def _nb_lcs_wrapper(a, b):
        return int(_nb_lcs_length(np.asarray(a, dtype=np.int64), np.asarray(b, dtype=np.int64)))

    def _nb_gather_wrapper(x, idx):
        return _nb_gather_last(np.ascontiguousarray(x), np.ascontiguousarray(idx, dtype=np.int64))

    def _nb_scatter_wrapper(src, idx, width):
        return _nb_scatter_last(np.ascontiguousarray(src), np.ascontiguousarray(idx, dtype=np.int64), width)

    numba_impl = SimpleNamespace(
        gather_last=_nb_gather_wrapper,
        scatter_last=_nb_scatter_wrapper,
        lcs_length=_nb_lcs_wrapper,
    )
else:  # pragma: no cover
    numba_impl = None

active = numba_impl if USE_NUMBA else numpy_impl


def gather_last(x, idx):
    """out[..., i, j] = x[..., i, idx[i, j]] for x of shape (..., L, R)."""
    lead = x.shape[:-2]
    flat = x.reshape((-1,) + x.shape[-2:])
    return active.gather_last(flat, idx).reshape(lead + idx.shape)


def scatter_last(src, idx, width):
    """Adjoint of :func:`gather_last`: sum ``src[..., i, j]`` into slot ``idx[i, j]``."""
    lead = src.shape[:-2]
    flat = src.reshape((-1,) + src.shape[-2:])
    return active.scatter_last(flat, idx, width).reshape(lead + (src.shape[-2], width))


def lcs_length(a, b):
    """Length of the longest common subsequence of two integer sequences."""
    return active.lcs_length(a, b)
