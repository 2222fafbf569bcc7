"""Wall-clock scaling of the selective scan against a quadratic softmax-attention baseline."""

from __future__ import annotations

import csv
import time
from pathlib import Path
from typing import Callable

import numpy as np
from threadpoolctl import threadpool_limits

from .ssm import scan_forward

KERNELS = ("s6", "attention")


def s6_case(length: int, dim: int = 4, state: int = 8, seed: int = 0) -> Callable[[], np.ndarray]:
    rng = np.random.default_rng(seed)
    u = rng.standard_normal((1, length, dim))
    a_bar = rng.uniform(0.5, 0.99, (1, length, dim, state))
    b_bar = rng.standard_normal((1, length, dim, state)) * 0.1
    c = rng.standard_normal((1, length, state))
    return lambda: scan_forward(u, a_bar, b_bar, c)[0]


def attention(q: np.ndarray, k: np.ndarray, v: np.ndarray, chunk: int = 1024) -> np.ndarray:
    """softmax(q k^T / sqrt(d)) v, row blocks at a time to bound memory."""
    out = np.empty((q.shape[0], v.shape[1]))
    scale = 1.0 / np.sqrt(q.shape[1])
    for i in range(0, q.shape[0], chunk):
        s = (q[i:i + chunk] @ k.T) * scale
        s -= s.max(axis=1, keepdims=True)
        np.exp(s, out=s)
        s /= s.sum(axis=1, keepdims=True)
        out[i:i + chunk] = s @ v
    return out


def attention_case(length: int, dim: int = 4, seed: int = 0) -> Callable[[], np.ndarray]:
    rng = np.random.default_rng(seed)
    q, k, v = (rng.standard_normal((length, dim)) for _ in range(3))
    return lambda: attention(q, k, v)


def median_time(fn: Callable[[], object], reps: int) -> float:
    fn()
    times = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def lengths_between(lmin: int, lmax: int) -> list[int]:
    if lmin < 1 or lmax < lmin:
        raise ValueError("need 1 <= lmin <= lmax")
    out, n = [], lmin
    while n <= lmax:
        out.append(n)
        n *= 2
    return out


def run(kernel: str, lengths: list[int], reps: int = 20, seed: int = 0) -> list[tuple[int, float]]:
    """Median seconds per call for each length, on a single BLAS thread."""
    if kernel not in KERNELS:
        raise ValueError(f"unknown kernel {kernel!r}; choose from {KERNELS}")
    make = s6_case if kernel == "s6" else attention_case
    with threadpool_limits(limits=1):
        return [(n, median_time(make(n, seed=seed), reps)) for n in lengths]


def doubling_ratios(results: list[tuple[int, float]]) -> list[float]:
    return [t1 / t0 for (_, t0), (_, t1) in zip(results, results[1:])]


def write_csv(results: list[tuple[int, float]], kernel: str, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["kernel", "L", "median_seconds"])
        for n, t in results:
            w.writerow([kernel, n, f"{t:.9f}"])
