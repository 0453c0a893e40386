"""Class rebalancing: random oversampling, SMOTE, ADASYN, ENN and Tomek
filtering, and the SMOTE+filter hybrids.

All methods oversample every non-maximal class up to the maximal class
count. Distances are Euclidean on the table as given, so callers should
standardize first; nearest-neighbor ties break toward the lower row index.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import SingleClass, TooFewMinority, TooFewRows
from .ingest import CLASS_ORDER, LabeledTable, ScamLabel, concat_tables

logger = logging.getLogger(__name__)

_CHUNK = 256


class Method(Enum):
    NONE = "none"
    ROS = "ros"
    SMOTE = "smote"
    ADASYN = "adasyn"
    SMOTE_ENN = "smote-enn"
    SMOTE_TOMEK = "smote-tomek"
    TOMEK = "tomek"


@dataclass(frozen=True)
class ResampleMethod:
    """A resampling choice plus its knobs. ENN inside smote-enn always
    uses 3 neighbors."""

    method: Method = Method.NONE
    k_neighbors: int = 5
    seed: int = 0

    @classmethod
    def from_cli_name(cls, name: str, k_neighbors: int = 5, seed: int = 0) -> "ResampleMethod":
        return cls(Method(name), k_neighbors, seed)


@dataclass(frozen=True)
class TomekPair:
    """Mutual cross-class 1-nearest-neighbor pair, by input row index."""

    i: int
    j: int


@dataclass(frozen=True)
class SmoteAudit:
    """Provenance of one synthetic row: base row, chosen neighbor, mix u."""

    label: ScamLabel
    base_index: int
    neighbor_index: int
    u: float


def squared_distances(x: np.ndarray, chunk: int = _CHUNK) -> np.ndarray:
    """Dense pairwise squared Euclidean distances via explicit differences.

    Accumulated feature by feature with elementwise adds, which is bit
    identical to the naive per-pair loop (only reduction order can differ
    between implementations, and here there is none). Row chunks keep the
    working set at O(chunk * n).
    """
    n, d = x.shape
    out = np.empty((n, n), dtype=np.float64)
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        acc = np.zeros((stop - start, n), dtype=np.float64)
        for k in range(d):
            diff = x[start:stop, k, None] - x[None, :, k]
            acc += diff * diff
        out[start:stop] = acc
    return out


def _knn_from_dists(dists: np.ndarray, k: int, exclude_self: bool = True) -> np.ndarray:
    """Indices (into dists' columns) of the k nearest per row; stable sort
    breaks distance ties by lower column index."""
    d = dists.copy()
    if exclude_self:
        np.fill_diagonal(d, np.inf)
    order = np.argsort(d, axis=1, kind="stable")
    return order[:, :k]


def interpolate(base: np.ndarray, neighbor: np.ndarray, u: float) -> np.ndarray:
    """Point on the segment from base toward neighbor at fraction u."""
    return base + u * (neighbor - base)


def largest_remainder(quotas: np.ndarray, total: int) -> np.ndarray:
    """Round nonnegative quotas to integers summing exactly to ``total``.

    Floor everything, then hand out the leftover units by descending
    fractional part, ties toward the lower index.
    """
    floors = np.floor(quotas).astype(np.intp)
    remainder = total - int(floors.sum())
    if remainder > 0:
        fractions = quotas - floors
        order = np.lexsort((np.arange(len(quotas)), -fractions))
        floors[order[:remainder]] += 1
    return floors


def _present_classes(table: LabeledTable) -> list[ScamLabel]:
    counts = table.class_counts()
    return [c for c in CLASS_ORDER if counts[c] > 0]


def random_oversample(table: LabeledTable, seed: int) -> LabeledTable:
    """Duplicate minority rows uniformly with replacement until every
    class count equals the maximum."""
    counts = table.class_counts()
    present = _present_classes(table)
    if len(present) < 2:
        raise SingleClass("random oversampling needs at least two classes")
    target = max(counts.values())
    rng = np.random.default_rng(seed)
    y = table.y

    new_rows, new_labels, new_ids = [], [], []
    serial = 0
    for label in CLASS_ORDER:
        count = counts[label]
        if count == 0 or count == target:
            continue
        members = np.flatnonzero(y == label.code)
        picks = rng.integers(0, count, size=target - count)
        for p in picks:
            src = int(members[p])
            new_rows.append(table.rows[src])
            new_labels.append(label)
            new_ids.append(f"{table.ids[src]}+ros{serial}")
            serial += 1
    return concat_tables(table, np.array(new_rows), new_labels, new_ids)


def smote(table: LabeledTable, k: int, seed: int,
          audit: list[SmoteAudit] | None = None) -> LabeledTable:
    """Oversample by interpolating each synthetic point between a minority
    row and one of its k nearest same-class neighbors."""
    counts = table.class_counts()
    present = _present_classes(table)
    if len(present) < 2:
        raise SingleClass("SMOTE needs at least two classes")
    target = max(counts.values())
    for label in present:
        if counts[label] < target and counts[label] <= k:
            raise TooFewMinority(
                f"class {label.value} has {counts[label]} rows, needs > k={k}"
            )
    rng = np.random.default_rng(seed)
    y = table.y

    new_rows, new_labels, new_ids = [], [], []
    serial = 0
    for label in CLASS_ORDER:
        count = counts[label]
        needed = target - count
        if count == 0 or needed == 0:
            continue
        members = np.flatnonzero(y == label.code)  # ascending, so ties stay index-ordered
        class_rows = table.rows[members]
        neighbors = _knn_from_dists(squared_distances(class_rows), k)
        bases = rng.integers(0, count, size=needed)
        picks = rng.integers(0, k, size=needed)
        us = rng.random(size=needed)
        for b, p, u in zip(bases, picks, us):
            base_global = int(members[b])
            neigh_global = int(members[neighbors[b, p]])
            new_rows.append(interpolate(table.rows[base_global], table.rows[neigh_global], u))
            new_labels.append(label)
            new_ids.append(f"smote-{label.value}-{serial}")
            if audit is not None:
                audit.append(SmoteAudit(label, base_global, neigh_global, float(u)))
            logger.debug("smote %s: base=%d neighbor=%d u=%.6f",
                         label.value, base_global, neigh_global, u)
            serial += 1
    return concat_tables(table, np.array(new_rows), new_labels, new_ids)


def adasyn(table: LabeledTable, k: int, seed: int,
           audit: list[SmoteAudit] | None = None) -> LabeledTable:
    """SMOTE variant that allocates more synthetics to minority rows whose
    k nearest neighbors (over the whole table) belong to other classes.

    Allocation is proportional to those cross-class fractions, made exact
    with largest-remainder rounding; if every fraction is 0, allocation
    falls back to uniform. Interpolation uses same-class neighbors.
    """
    counts = table.class_counts()
    present = _present_classes(table)
    if len(present) < 2:
        raise SingleClass("ADASYN needs at least two classes")
    target = max(counts.values())
    for label in present:
        if counts[label] < target and counts[label] <= k:
            raise TooFewMinority(
                f"class {label.value} has {counts[label]} rows, needs > k={k}"
            )
    rng = np.random.default_rng(seed)
    y = table.y
    full_neighbors = _knn_from_dists(squared_distances(table.rows), k)

    new_rows, new_labels, new_ids = [], [], []
    serial = 0
    for label in CLASS_ORDER:
        count = counts[label]
        needed = target - count
        if count == 0 or needed == 0:
            continue
        members = np.flatnonzero(y == label.code)
        ratios = np.array(
            [(y[full_neighbors[m]] != label.code).sum() / k for m in members]
        )
        if ratios.sum() == 0.0:
            weights = np.full(count, 1.0 / count)
        else:
            weights = ratios / ratios.sum()
        allocation = largest_remainder(weights * needed, needed)

        class_rows = table.rows[members]
        same_class_neighbors = _knn_from_dists(squared_distances(class_rows), k)
        for local_idx, quota in enumerate(allocation):
            if quota == 0:
                continue
            picks = rng.integers(0, k, size=quota)
            us = rng.random(size=quota)
            base_global = int(members[local_idx])
            for p, u in zip(picks, us):
                neigh_global = int(members[same_class_neighbors[local_idx, p]])
                new_rows.append(
                    interpolate(table.rows[base_global], table.rows[neigh_global], u)
                )
                new_labels.append(label)
                new_ids.append(f"adasyn-{label.value}-{serial}")
                if audit is not None:
                    audit.append(SmoteAudit(label, base_global, neigh_global, float(u)))
                serial += 1
    return concat_tables(table, np.array(new_rows), new_labels, new_ids)


def enn_filter(table: LabeledTable, k: int = 3) -> LabeledTable:
    """Drop every row whose label differs from the unique majority label of
    its k nearest neighbors; neighbor-label ties keep the row. Neighborhoods
    come from the input table in a single pass."""
    if table.n_rows <= k:
        raise TooFewRows(f"ENN needs more than k={k} rows, got {table.n_rows}")
    y = table.y
    neighbors = _knn_from_dists(squared_distances(table.rows), k)
    keep = []
    for i in range(table.n_rows):
        votes = np.bincount(y[neighbors[i]], minlength=len(CLASS_ORDER))
        top = votes.max()
        winners = np.flatnonzero(votes == top)
        if len(winners) > 1 or winners[0] == y[i]:
            keep.append(i)
    return table.take(keep)


def tomek_filter(table: LabeledTable) -> tuple[LabeledTable, list[TomekPair]]:
    """Find mutual cross-class 1-nearest-neighbor pairs and drop the member
    of the globally larger class from each; equal-sized classes drop
    neither. Returns the filtered table and the pair evidence."""
    present = _present_classes(table)
    if len(present) < 2:
        raise SingleClass("Tomek filtering needs at least two classes")
    y = table.y
    nn1 = _knn_from_dists(squared_distances(table.rows), 1)[:, 0]
    counts = np.bincount(y, minlength=len(CLASS_ORDER))

    pairs: list[TomekPair] = []
    removed: set[int] = set()
    for i in range(table.n_rows):
        j = int(nn1[i])
        if j <= i or int(nn1[j]) != i or y[i] == y[j]:
            continue
        pairs.append(TomekPair(i, j))
        if counts[y[i]] > counts[y[j]]:
            removed.add(i)
        elif counts[y[j]] > counts[y[i]]:
            removed.add(j)
    keep = [i for i in range(table.n_rows) if i not in removed]
    return table.take(keep), pairs


def smote_enn(table: LabeledTable, k_smote: int = 5, k_enn: int = 3,
              seed: int = 0) -> LabeledTable:
    """SMOTE to balance, then ENN cleaning on the result."""
    return enn_filter(smote(table, k_smote, seed), k_enn)


def smote_tomek(table: LabeledTable, k_smote: int = 5, seed: int = 0) -> LabeledTable:
    """SMOTE to balance, then Tomek-link removal on the result."""
    filtered, _ = tomek_filter(smote(table, k_smote, seed))
    return filtered


def apply_method(table: LabeledTable, spec: ResampleMethod) -> LabeledTable:
    """Dispatch a ResampleMethod against a table."""
    m = spec.method
    if m is Method.NONE:
        return table.copy()
    if m is Method.ROS:
        return random_oversample(table, spec.seed)
    if m is Method.SMOTE:
        return smote(table, spec.k_neighbors, spec.seed)
    if m is Method.ADASYN:
        return adasyn(table, spec.k_neighbors, spec.seed)
    if m is Method.SMOTE_ENN:
        return smote_enn(table, spec.k_neighbors, 3, spec.seed)
    if m is Method.SMOTE_TOMEK:
        return smote_tomek(table, spec.k_neighbors, spec.seed)
    if m is Method.TOMEK:
        return tomek_filter(table)[0]
    raise ValueError(f"unknown method {m}")
