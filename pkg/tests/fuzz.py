"""Random frequency tables and symbol streams shared by the coder tests."""

from __future__ import annotations

import math

import numpy as np

from asymcodec.rangecoder import TOTAL, FrequencyTable


def random_table(rng: np.random.Generator, size: int | None = None, skew: float | None = None) -> FrequencyTable:
    """Counts summing to 2**16 with every symbol >= 1; ``skew`` sharpens the Dirichlet draw."""
    size = size or int(rng.integers(2, 300))
    skew = rng.uniform(0.05, 3.0) if skew is None else skew
    p = rng.dirichlet(np.full(size, skew))
    counts = np.floor(p * (TOTAL - size)).astype(np.int64) + 1
    counts[np.argmax(counts)] += TOTAL - counts.sum()
    return FrequencyTable.from_counts(counts)


def sample_symbols(rng: np.random.Generator, tables, n: int) -> tuple[list[int], list[FrequencyTable]]:
    """``n`` symbols, each drawn from the pmf of a randomly chosen table."""
    choice = rng.integers(len(tables), size=n)
    per_table = []
    for t in tables:
        c = np.asarray(t.cumulative)
        per_table.append(np.diff(c) / TOTAL)
    symbols = np.empty(n, dtype=np.int64)
    for k, t in enumerate(tables):
        where = np.flatnonzero(choice == k)
        symbols[where] = rng.choice(len(per_table[k]), size=where.size, p=per_table[k])
    return symbols.tolist(), [tables[k] for k in choice]


def ideal_bits(symbols, tables) -> float:
    """Self-information of the message under its own tables, computed independently."""
    total = 0.0
    for s, t in zip(symbols, tables):
        total -= math.log2((t.cumulative[s + 1] - t.cumulative[s]) / TOTAL)
    return total
