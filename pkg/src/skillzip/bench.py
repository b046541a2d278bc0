"""FLOP accounting and wall-clock measurement for the two execution paths.

The dense path applies a full C_i x C_out delta; the low-rank path runs
T x R x (C_i + C_out) multiply-adds plus quantization overhead. Timings are
medians over repeats and are informational; the FLOP counts are closed
form and exact.
"""

from __future__ import annotations

import time
from statistics import median


def flops_dense(tokens: int, c_in: int, c_out: int) -> int:
    """Multiply-adds for the dense delta matmul."""
    return tokens * c_in * c_out


def flops_lowrank(tokens: int, c_in: int, c_out: int, rank: int) -> int:
    """Multiply-adds for the factored path (both stages)."""
    return tokens * rank * (c_in + c_out)


def flop_ratio(c_in: int, c_out: int, rank: int) -> float:
    """Dense over low-rank multiply-adds, independent of token count."""
    return (c_in * c_out) / (rank * (c_in + c_out))


def time_callable(fn, repeats: int = 3) -> float:
    """Median wall-clock seconds over `repeats` calls."""
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    samples = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - start)
    return float(median(samples))
