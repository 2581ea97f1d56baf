"""Small numerical helpers: deterministic reductions, chunked maps, quadrature weights."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np


def pairwise_sum(a: np.ndarray, axis: int = 0) -> np.ndarray:
    """Sum along `axis` with a fixed binary-tree order.

    The tree splits at the midpoint recursively, so the result is bitwise
    independent of how the entries were produced (worker count, chunking).
    """
    a = np.asarray(a)
    a = np.moveaxis(a, axis, 0)
    n = a.shape[0]
    if n == 0:
        return np.zeros(a.shape[1:], dtype=a.dtype if a.dtype.kind == "f" else float)
    while n > 1:
        half = n // 2
        head = a[: 2 * half : 2] + a[1 : 2 * half : 2]
        if n % 2:
            a = np.concatenate([head, a[n - 1 : n]], axis=0)
        else:
            a = head
        n = a.shape[0]
    return a[0]


def pairwise_mean(a: np.ndarray, axis: int = 0) -> np.ndarray:
    a = np.asarray(a)
    return pairwise_sum(a, axis=axis) / a.shape[axis]


def mean_and_stderr(samples: np.ndarray) -> tuple[float, float]:
    """Deterministic Monte Carlo mean and standard error of a 1-d sample array."""
    samples = np.asarray(samples, dtype=float)
    n = samples.size
    m = float(pairwise_sum(samples) / n)
    if n < 2:
        return m, float("inf")
    var = float(pairwise_sum((samples - m) ** 2) / (n - 1))
    return m, float(np.sqrt(var / n))


def map_chunks(fn, n_items: int, workers: int = 1, chunk: int | None = None) -> list:
    """Apply fn(lo, hi) over [0, n_items) in contiguous chunks, in index order.

    Thread-based: the heavy work is vectorised numpy, which releases the GIL.
    Results are returned ordered by chunk index, so downstream pairwise
    reductions see the same operand order for any worker count.
    """
    if n_items <= 0:
        return []
    workers = max(1, int(workers))
    if chunk is None:
        chunk = max(1, -(-n_items // max(workers, 1)))
    bounds = [(lo, min(lo + chunk, n_items)) for lo in range(0, n_items, chunk)]
    if workers == 1 or len(bounds) == 1:
        return [fn(lo, hi) for lo, hi in bounds]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(fn, lo, hi) for lo, hi in bounds]
        return [f.result() for f in futures]


def trapezoid_weights(n_nodes: int, dt: float) -> np.ndarray:
    """Trapezoid quadrature weights on a uniform grid of n_nodes points."""
    w = np.full(n_nodes, dt)
    w[0] *= 0.5
    w[-1] *= 0.5
    return w


def log_log_slope(x: np.ndarray, y: np.ndarray) -> float:
    """Least-squares slope of log(y) against log(x)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any(y <= 0) or np.any(x <= 0):
        raise ValueError("log-log fit needs positive data")
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


_GAUSS_NODES, _GAUSS_WEIGHTS = np.polynomial.legendre.leggauss(24)


def gauss_on_intervals(fn, a, b) -> np.ndarray:
    """24-point Gauss-Legendre quadrature of fn over [a, b], vectorised over b.

    `a` is scalar, `b` an array; returns an array of b's shape. Exact to
    machine precision for the smooth integrands used in the kinetic pairings.
    """
    b = np.asarray(b, dtype=float)
    half = 0.5 * (b - a)
    mid = 0.5 * (b + a)
    nodes = mid[..., None] + half[..., None] * _GAUSS_NODES
    vals = fn(nodes)
    return half * np.einsum("...q,q->...", vals, _GAUSS_WEIGHTS)
