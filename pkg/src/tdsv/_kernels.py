"""Batch scoring kernels: numba-jitted hot loops with a pure-numpy fallback.

The backend is chosen once at import from the TDSV_KERNELS environment
variable: "numba" (default when importable), "numpy", or "auto". Both
backends implement the same contracts on unit-normalized float64 row
matrices:

    cohort_mean_std(cohort, probes, top_k, std_floor) -> (means, stds)
        per-probe mean and population std of clamped cosine scores
        against every cohort row; top_k > 0 restricts the statistics to
        the top_k highest scores (top_k >= len(cohort) is the full path).

    rowwise_dot(a, b) -> per-row clamped dot products of two aligned
        matrices.

Each probe is reduced serially inside one worker, so results are
bit-identical for any thread count. benchmarks/bench_scoring.py compares
the two backends on the 10k-trial / 10k-cohort workload.
"""

from __future__ import annotations

import os

import numpy as np

# Probes per numpy gemm block. Fixed constant: block boundaries must never
# depend on thread count or input size, or outputs could drift between runs.
_BLOCK = 512


def _numpy_cohort_mean_std(cohort: np.ndarray, probes: np.ndarray,
                           top_k: int, std_floor: float):
    n_cohort = cohort.shape[0]
    n_probes = probes.shape[0]
    means = np.empty(n_probes, dtype=np.float64)
    stds = np.empty(n_probes, dtype=np.float64)
    use_topk = 0 < top_k < n_cohort
    for start in range(0, n_probes, _BLOCK):
        block = probes[start : start + _BLOCK]
        scores = cohort @ block.T
        np.clip(scores, -1.0, 1.0, out=scores)
        if use_topk:
            part = np.partition(scores, n_cohort - top_k, axis=0)[n_cohort - top_k :]
            scores = np.sort(part, axis=0)  # sorted order fixes the summation order
        m = scores.mean(axis=0)
        s = np.sqrt(np.mean((scores - m) ** 2, axis=0))
        means[start : start + block.shape[0]] = m
        stds[start : start + block.shape[0]] = np.maximum(s, std_floor)
    return means, stds


def _numpy_rowwise_dot(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    out = np.einsum("ij,ij->i", a, b)
    np.clip(out, -1.0, 1.0, out=out)
    return out


def _build_numba():
    import numba

    # fastmath lets LLVM vectorize the dot-product reductions; the compiled
    # reassociation is fixed, so outputs stay bit-identical across runs and
    # thread counts (each probe is still reduced by exactly one worker).
    @numba.njit(parallel=True, cache=True, fastmath=True)
    def cohort_mean_std(cohort, probes, top_k, std_floor):
        n_cohort, dim = cohort.shape
        n_probes = probes.shape[0]
        means = np.empty(n_probes, dtype=np.float64)
        stds = np.empty(n_probes, dtype=np.float64)
        for i in numba.prange(n_probes):
            scores = np.empty(n_cohort, dtype=np.float64)
            for j in range(n_cohort):
                acc = 0.0
                for k in range(dim):
                    acc += cohort[j, k] * probes[i, k]
                if acc > 1.0:
                    acc = 1.0
                elif acc < -1.0:
                    acc = -1.0
                scores[j] = acc
            if 0 < top_k < n_cohort:
                sel = np.sort(np.partition(scores, n_cohort - top_k)[n_cohort - top_k :])
            else:
                sel = scores
            n_sel = sel.shape[0]
            total = 0.0
            for j in range(n_sel):
                total += sel[j]
            m = total / n_sel
            var = 0.0
            for j in range(n_sel):
                d = sel[j] - m
                var += d * d
            s = np.sqrt(var / n_sel)
            means[i] = m
            stds[i] = s if s >= std_floor else std_floor
        return means, stds

    @numba.njit(parallel=True, cache=True, fastmath=True)
    def rowwise_dot(a, b):
        n, dim = a.shape
        out = np.empty(n, dtype=np.float64)
        for i in numba.prange(n):
            acc = 0.0
            for k in range(dim):
                acc += a[i, k] * b[i, k]
            if acc > 1.0:
                acc = 1.0
            elif acc < -1.0:
                acc = -1.0
            out[i] = acc
        return out

    return cohort_mean_std, rowwise_dot, numba.set_num_threads, numba.config.NUMBA_NUM_THREADS


_requested = os.environ.get("TDSV_KERNELS", "auto").strip().lower()
if _requested not in ("auto", "numba", "numpy"):
    raise ValueError(
        f"TDSV_KERNELS={_requested!r} not recognized (use 'auto', 'numba', or 'numpy')"
    )

_numba_funcs = None
if _requested in ("auto", "numba"):
    try:
        _numba_funcs = _build_numba()
    except ImportError:
        if _requested == "numba":
            raise
        _numba_funcs = None

if _numba_funcs is not None:
    BACKEND = "numba"
    cohort_mean_std, rowwise_dot, _set_threads, _max_threads = _numba_funcs
else:
    BACKEND = "numpy"
    cohort_mean_std = _numpy_cohort_mean_std
    rowwise_dot = _numpy_rowwise_dot
    _set_threads, _max_threads = None, 1


def set_threads(n: int) -> None:
    """Set the worker count for jitted kernels; no-op on the numpy backend."""
    if _set_threads is not None:
        _set_threads(max(1, min(int(n), _max_threads)))


def backends() -> dict:
    """All importable backend implementations, for benchmarks and tests."""
    table = {"numpy": (_numpy_cohort_mean_std, _numpy_rowwise_dot)}
    if _numba_funcs is not None:
        table["numba"] = (_numba_funcs[0], _numba_funcs[1])
    return table
