"""Hot inner-loop kernels, each with a numba-jitted and a pure-numpy implementation.

The active backend is chosen at import time from the ``DECODELAB_NUMBA``
environment variable (``0`` forces the numpy path) and falls back to numpy
automatically when numba is unavailable. ``set_backend`` switches at runtime,
which the equivalence tests and ``benchmarks/bench_kernels.py`` rely on.

All kernels are integer-exact: for identical inputs the two backends return
bit-identical outputs, so decoding results never depend on the backend.
"""

from __future__ import annotations

import os

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

try:
    from numba import njit

    _NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - exercised only without numba installed
    _NUMBA_AVAILABLE = False

_BACKENDS = ("numba", "numpy")

_backend = "numpy"
if _NUMBA_AVAILABLE and os.environ.get("DECODELAB_NUMBA", "1") != "0":
    _backend = "numba"


def set_backend(name: str) -> None:
    """Select the kernel backend ("numba" or "numpy") for this process."""
    if name not in _BACKENDS:
        raise ValueError(f"unknown backend {name!r}, expected one of {_BACKENDS}")
    if name == "numba" and not _NUMBA_AVAILABLE:
        raise ValueError("numba backend requested but numba is not importable")
    global _backend
    _backend = name


def current_backend() -> str:
    return _backend


# ---------------------------------------------------------------------------
# numpy implementations


def _top_indices_np(values: np.ndarray, k: int) -> np.ndarray:
    # lexsort: primary key -values (descending values), secondary ascending index
    order = np.lexsort((np.arange(values.shape[0]), -values))
    return order[:k].astype(np.int64)


def _blocked_mask_np(history: np.ndarray, n: int, vocab_size: int) -> np.ndarray:
    mask = np.zeros(vocab_size, dtype=np.bool_)
    length = history.shape[0]
    if length < n:
        return mask
    m = n - 1
    tail = history[length - m :]
    windows = sliding_window_view(history, m)[: length - n + 1]
    hits = np.nonzero((windows == tail).all(axis=1))[0]
    mask[history[hits + m]] = True
    return mask


def _window_keys_np(tokens: np.ndarray, n: int, vocab_size: int) -> np.ndarray:
    windows = sliding_window_view(tokens, n)
    weights = vocab_size ** np.arange(n - 1, -1, -1, dtype=np.int64)
    return windows @ weights


def _distinct_count_np(tokens: np.ndarray, n: int, vocab_size: int) -> int:
    if tokens.shape[0] < n:
        return 0
    return int(np.unique(_window_keys_np(tokens, n, vocab_size)).shape[0])


# ---------------------------------------------------------------------------
# numba implementations (plain loops; same outputs as the numpy path)

if _NUMBA_AVAILABLE:

    @njit(cache=True)
    def _top_indices_nb(values, k):  # pragma: no cover - jitted
        size = values.shape[0]
        out = np.empty(k, np.int64)
        taken = np.zeros(size, np.bool_)
        for i in range(k):
            best = -1
            best_val = -np.inf
            for j in range(size):
                if taken[j]:
                    continue
                if best == -1 or values[j] > best_val:
                    best = j
                    best_val = values[j]
            out[i] = best
            taken[best] = True
        return out

    @njit(cache=True)
    def _blocked_mask_nb(history, n, vocab_size):  # pragma: no cover - jitted
        mask = np.zeros(vocab_size, np.bool_)
        length = history.shape[0]
        if length < n:
            return mask
        m = n - 1
        for j in range(length - n + 1):
            match = True
            for i in range(m):
                if history[j + i] != history[length - m + i]:
                    match = False
                    break
            if match:
                mask[history[j + m]] = True
        return mask

    @njit(cache=True)
    def _distinct_count_nb(tokens, n, vocab_size):  # pragma: no cover - jitted
        count = tokens.shape[0] - n + 1
        if count <= 0:
            return 0
        keys = np.empty(count, np.int64)
        for i in range(count):
            key = np.int64(0)
            for j in range(n):
                key = key * vocab_size + tokens[i + j]
            keys[i] = key
        keys.sort()
        distinct = 1
        for i in range(1, count):
            if keys[i] != keys[i - 1]:
                distinct += 1
        return distinct


# ---------------------------------------------------------------------------
# dispatching wrappers


def _as_f64(values) -> np.ndarray:
    return np.ascontiguousarray(values, dtype=np.float64)


def _as_i64(values) -> np.ndarray:
    return np.ascontiguousarray(values, dtype=np.int64)


def top_indices(values, k: int) -> np.ndarray:
    """Indices of the ``k`` largest entries, ties broken by ascending index."""
    arr = _as_f64(values)
    if not 1 <= k <= arr.shape[0]:
        raise ValueError(f"k={k} out of range for {arr.shape[0]} values")
    if _backend == "numba":
        return _top_indices_nb(arr, k)
    return _top_indices_np(arr, k)


def blocked_mask(history, n: int, vocab_size: int) -> np.ndarray:
    """Boolean mask over the vocabulary of tokens that would complete an
    n-gram already occurring in ``history``."""
    arr = _as_i64(history)
    if n < 2:
        raise ValueError("blocking order must be >= 2")
    if _backend == "numba":
        return _blocked_mask_nb(arr, n, vocab_size)
    return _blocked_mask_np(arr, n, vocab_size)


def distinct_window_count(tokens, n: int, vocab_size: int) -> int:
    """Number of distinct contiguous length-``n`` windows in ``tokens``.

    Falls back to a hash-set scan when ``vocab_size ** n`` would overflow the
    int64 key encoding (e.g. large blocking orders).
    """
    arr = _as_i64(tokens)
    if n < 1:
        raise ValueError("window size must be >= 1")
    if n * np.log2(max(vocab_size, 2)) >= 62:
        if arr.shape[0] < n:
            return 0
        seen = {tuple(arr[i : i + n]) for i in range(arr.shape[0] - n + 1)}
        return len(seen)
    if _backend == "numba":
        return int(_distinct_count_nb(arr, n, vocab_size))
    return _distinct_count_np(arr, n, vocab_size)
