"""Synthetic feature tables for benchmarks and self-checks.

The flagship generator mimics the class imbalance of the real address
corpus (ratios 3008:285:3526) with Gaussian class clouds whose means sit
``separation`` apart, so any competent classifier should ace it at wide
separation and struggle gracefully as the clouds overlap.
"""

from __future__ import annotations

import math

import numpy as np

from .features import FEATURE_NAMES
from .ingest import CLASS_ORDER, LabeledTable, ScamLabel
from .resampling import largest_remainder

CLASS_WEIGHTS = (3008, 285, 3526)


def class_counts_for(n: int, weights: tuple[int, ...] = CLASS_WEIGHTS) -> tuple[int, ...]:
    """Largest-remainder split of n rows across the three classes."""
    if n < len(weights):
        raise ValueError(f"need at least {len(weights)} rows, got {n}")
    total_w = sum(weights)
    quotas = np.array([n * w / total_w for w in weights])
    return tuple(int(c) for c in largest_remainder(quotas, n))


def _gaussian_table(counts: tuple[int, ...], means: np.ndarray, sigma: float,
                    feature_names: tuple[str, ...], seed: int,
                    id_prefix: str) -> LabeledTable:
    rng = np.random.default_rng(seed)
    d = len(feature_names)
    blocks = []
    labels: list[ScamLabel] = []
    ids: list[str] = []
    serial = 0
    for label, count, mean in zip(CLASS_ORDER, counts, means):
        if count == 0:
            continue
        blocks.append(rng.normal(loc=mean, scale=sigma, size=(count, d)))
        labels.extend([label] * count)
        for _ in range(count):
            ids.append(f"{id_prefix}-{serial:06d}")
            serial += 1
    rows = np.vstack(blocks) if blocks else np.empty((0, d))
    return LabeledTable(feature_names=tuple(feature_names), rows=rows,
                        labels=labels, ids=ids)


def make_synthetic_table(n: int = 1500, separation: float = 6.0,
                         seed: int = 42) -> LabeledTable:
    """Imbalanced 17-column table; class means are (separation/sqrt(2)) along
    axes 0/1/2 so every pair of means is exactly ``separation`` apart."""
    counts = class_counts_for(n)
    d = len(FEATURE_NAMES)
    means = np.zeros((3, d))
    for k in range(3):
        means[k, k] = separation / math.sqrt(2.0)
    return _gaussian_table(counts, means, 1.0, FEATURE_NAMES, seed, "syn")


def make_blobs_table(n_per_class: int, n_features: int = 4,
                     separation: float = 10.0, seed: int = 0) -> LabeledTable:
    """Small balanced table for unit tests."""
    names = tuple(f"x{j}" for j in range(n_features))
    means = np.zeros((3, n_features))
    for k in range(3):
        means[k, k % n_features] = separation
    return _gaussian_table((n_per_class,) * 3, means, 1.0, names, seed, "blob")


IMPORTANCE_FEATURES = ("signal_a", "signal_b") + tuple(
    f"noise_{j:02d}" for j in range(1, 16)
)


def make_importance_table(n: int = 300, separation: float = 4.0,
                          seed: int = 0) -> LabeledTable:
    """Only the first two columns carry class signal; the other fifteen are
    pure N(0,1) noise. Class means form a triangle in the signal plane."""
    counts = class_counts_for(n, (1, 1, 1))
    d = len(IMPORTANCE_FEATURES)
    means = np.zeros((3, d))
    means[1, 0] = separation
    means[2, 1] = separation
    return _gaussian_table(counts, means, 1.0, IMPORTANCE_FEATURES, seed, "imp")


def make_position_xor_table(n: int = 400, seed: int = 0) -> LabeledTable:
    """Two-class task where the label is the sign agreement of the first
    and last features; positions in between are noise. Solving it requires
    carrying position-0 information across the whole sequence, which is
    what the attention layer is for."""
    rng = np.random.default_rng(seed)
    d = len(FEATURE_NAMES)
    rows = rng.normal(0.0, 0.3, size=(n, d))
    signs = rng.choice([-1.0, 1.0], size=(n, 2))
    rows[:, 0] += signs[:, 0] * 2.0
    rows[:, -1] += signs[:, 1] * 2.0
    same = signs[:, 0] == signs[:, 1]
    labels = [CLASS_ORDER[1] if s else CLASS_ORDER[0] for s in same]
    ids = [f"xor-{i:06d}" for i in range(n)]
    return LabeledTable(feature_names=FEATURE_NAMES, rows=rows, labels=labels, ids=ids)
