"""Resamplers checked against independent brute-force reimplementations.

The oracles here use plain Python loops and sorted() tie-breaking; the
library must agree with them exactly, including distance ties.
"""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scamlens.errors import SingleClass, TooFewMinority, TooFewRows
from scamlens.ingest import CLASS_ORDER, table_equal
from scamlens.resampling import (
    Method,
    ResampleMethod,
    SmoteAudit,
    TomekPair,
    adasyn,
    apply_method,
    enn_filter,
    interpolate,
    largest_remainder,
    random_oversample,
    smote,
    smote_enn,
    smote_tomek,
    squared_distances,
    tomek_filter,
)

from conftest import build_table, tables


# ---------------------------------------------------------------------------
# Brute-force oracles (independent, loop-based)
# ---------------------------------------------------------------------------

def brute_sq_dists(rows: np.ndarray) -> np.ndarray:
    n, d = rows.shape
    out = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            s = 0.0
            for k in range(d):
                diff = rows[i, k] - rows[j, k]
                s += diff * diff
            out[i, j] = s
    return out


def brute_knn(rows: np.ndarray, k: int, candidates=None) -> list[list[int]]:
    """k nearest by squared distance; ties by lower index. ``candidates``
    restricts the neighbor pool (defaults to everything but self)."""
    d = brute_sq_dists(rows)
    n = rows.shape[0]
    pool = range(n) if candidates is None else candidates
    result = []
    for i in range(n):
        order = sorted((d[i, j], j) for j in pool if j != i)
        result.append([j for _, j in order[:k]])
    return result


def brute_enn(rows: np.ndarray, y: np.ndarray, k: int) -> list[int]:
    """Indices kept by edited-nearest-neighbors with unique-majority removal."""
    neighbors = brute_knn(rows, k)
    keep = []
    for i in range(rows.shape[0]):
        votes = {}
        for j in neighbors[i]:
            votes[y[j]] = votes.get(y[j], 0) + 1
        best = max(votes.values())
        winners = [cls for cls, v in votes.items() if v == best]
        if len(winners) == 1 and winners[0] != y[i]:
            continue  # unique disagreeing majority evicts the row
        keep.append(i)
    return keep


def brute_tomek(rows: np.ndarray, y: np.ndarray) -> list[tuple[int, int]]:
    nn1 = [js[0] for js in brute_knn(rows, 1)]
    pairs = []
    for i in range(rows.shape[0]):
        j = nn1[i]
        if nn1[j] == i and y[i] != y[j] and i < j:
            pairs.append((i, j))
    return pairs


# ---------------------------------------------------------------------------
# Distance and helper primitives
# ---------------------------------------------------------------------------

@settings(max_examples=30, deadline=None)
@given(tables(max_rows=25))
def test_squared_distances_match_bruteforce_bitwise(table):
    assert np.array_equal(squared_distances(table.rows, chunk=5),
                          brute_sq_dists(table.rows))


def test_interpolate_endpoints():
    base = np.array([1.0, 2.0])
    neighbor = np.array([3.0, -2.0])
    assert np.array_equal(interpolate(base, neighbor, 0.0), base)
    assert np.array_equal(interpolate(base, neighbor, 1.0), neighbor)
    assert np.array_equal(interpolate(base, neighbor, 0.5), np.array([2.0, 0.0]))


def test_largest_remainder_known_cases():
    assert largest_remainder(np.array([1.5, 1.5, 1.0]), 4).tolist() == [2, 1, 1]
    assert largest_remainder(np.array([0.0, 0.0]), 3).tolist() == [2, 1]
    # the corpus proportions at n=1500
    weights = np.array([3008, 285, 3526], dtype=float)
    quotas = 1500 * weights / weights.sum()
    assert largest_remainder(quotas, 1500).tolist() == [662, 63, 775]


@settings(max_examples=50)
@given(st.lists(st.floats(0, 50), min_size=1, max_size=6), st.integers(0, 100))
def test_largest_remainder_properties(quotas, extra):
    q = np.array(quotas)
    total = int(np.floor(q).sum()) + extra % (len(quotas) + 1)
    out = largest_remainder(q, total)
    assert out.sum() == total
    assert (out >= np.floor(q).astype(int)).all() or total < np.floor(q).sum()


def test_knn_tie_broken_by_lower_index():
    # three identical points: everyone's 1-NN must be the lowest other index
    rows = np.zeros((3, 2))
    table = build_table(rows, [0, 0, 1])
    got = brute_knn(rows, 2)
    assert got == [[1, 2], [0, 2], [0, 1]]
    pairs = tomek_filter(table)[1]
    # row 2's nn is 0, row 0's nn is 1 -> no mutual cross-class pair
    assert pairs == []


# ---------------------------------------------------------------------------
# Random oversampling
# ---------------------------------------------------------------------------

@settings(max_examples=25, deadline=None)
@given(tables())
def test_ros_balances_with_copies(table):
    out = random_oversample(table, seed=3)
    counts = out.class_counts()
    target = max(table.class_counts().values())
    for label, count in counts.items():
        if table.class_counts()[label] > 0:
            assert count == target
    # originals come first, untouched
    assert table_equal(out.take(range(table.n_rows)), table)
    # every synthetic row is a copy of an original row of the same class
    for i in range(table.n_rows, out.n_rows):
        matches = [j for j in range(table.n_rows)
                   if np.array_equal(out.rows[i], table.rows[j])
                   and out.labels[i] == table.labels[j]]
        assert matches
        assert "+ros" in out.ids[i]


def test_ros_deterministic_and_single_class():
    table = build_table(np.arange(12, dtype=float).reshape(6, 2), [0, 0, 0, 0, 1, 1])
    assert table_equal(random_oversample(table, 9), random_oversample(table, 9))
    with pytest.raises(SingleClass):
        random_oversample(build_table(np.zeros((3, 1)), [1, 1, 1]), 0)


# ---------------------------------------------------------------------------
# SMOTE
# ---------------------------------------------------------------------------

def _check_smote_audit(table, out, audit, k):
    """Each synthetic row must be an exact interpolation between its audited
    base and a genuine k-nearest same-class neighbor of that base."""
    y = table.y
    for pos, entry in enumerate(audit):
        row = out.rows[table.n_rows + pos]
        base = table.rows[entry.base_index]
        neighbor = table.rows[entry.neighbor_index]
        assert np.array_equal(row, interpolate(base, neighbor, entry.u))
        assert out.labels[table.n_rows + pos] == entry.label
        assert y[entry.base_index] == entry.label.code
        assert y[entry.neighbor_index] == entry.label.code
        same = [j for j in range(table.n_rows) if y[j] == entry.label.code]
        knn = brute_knn(table.rows, k, candidates=same)[entry.base_index]
        assert entry.neighbor_index in knn


@settings(max_examples=20, deadline=None)
@given(tables(min_rows=14, max_rows=30, min_per_class=4), st.integers(1, 3))
def test_smote_geometry_and_counts(table, k):
    audit: list[SmoteAudit] = []
    out = smote(table, k=k, seed=11, audit=audit)
    target = max(table.class_counts().values())
    for label, count in out.class_counts().items():
        if table.class_counts()[label] > 0:
            assert count == target
    assert table_equal(out.take(range(table.n_rows)), table)
    assert len(audit) == out.n_rows - table.n_rows
    _check_smote_audit(table, out, audit, k)


def test_smote_requires_enough_minority():
    table = build_table(np.arange(14, dtype=float).reshape(7, 2),
                        [0, 0, 0, 0, 0, 1, 1])
    with pytest.raises(TooFewMinority):
        smote(table, k=2, seed=0)
    out = smote(table, k=1, seed=0)  # 2 minority rows > k=1 works
    assert out.class_counts()[CLASS_ORDER[1]] == 5


def test_smote_single_class():
    with pytest.raises(SingleClass):
        smote(build_table(np.zeros((4, 1)), [0, 0, 0, 0]), 1, 0)


# ---------------------------------------------------------------------------
# ADASYN
# ---------------------------------------------------------------------------

def brute_adasyn_allocation(rows, y, label_code, k, needed):
    neighbors = brute_knn(rows, k)
    members = [i for i in range(len(rows)) if y[i] == label_code]
    ratios = np.array([
        sum(1 for j in neighbors[m] if y[j] != label_code) / k for m in members
    ])
    if ratios.sum() == 0.0:
        weights = np.full(len(members), 1.0 / len(members))
    else:
        weights = ratios / ratios.sum()
    return largest_remainder(weights * needed, needed)


@settings(max_examples=20, deadline=None)
@given(tables(min_rows=14, max_rows=30, min_per_class=4), st.integers(2, 3))
def test_adasyn_allocation_and_geometry(table, k):
    audit: list[SmoteAudit] = []
    out = adasyn(table, k=k, seed=5, audit=audit)
    counts = table.class_counts()
    target = max(counts.values())
    for label, count in out.class_counts().items():
        if counts[label] > 0:
            assert count == target
    _check_smote_audit(table, out, audit, k)
    # per-base allocation equals the brute-force largest-remainder quota
    y = table.y
    for label in CLASS_ORDER:
        needed = target - counts[label]
        if counts[label] == 0 or needed == 0:
            continue
        members = [i for i in range(table.n_rows) if y[i] == label.code]
        expected = brute_adasyn_allocation(table.rows, y, label.code, k, needed)
        got = np.zeros(len(members), dtype=int)
        for entry in audit:
            if entry.label is label:
                got[members.index(entry.base_index)] += 1
        assert got.tolist() == expected.tolist()


def test_adasyn_uniform_fallback():
    # classes far apart: every k-neighborhood is same-class, all ratios 0
    rows = np.vstack([np.zeros((4, 2)) + np.arange(4)[:, None] * 0.01,
                      np.full((2, 2), 100.0) + np.array([[0.0, 0.0], [0.01, 0.01]])])
    table = build_table(rows, [0, 0, 0, 0, 1, 1])
    audit: list[SmoteAudit] = []
    out = adasyn(table, k=1, seed=0, audit=audit)
    assert out.class_counts()[CLASS_ORDER[1]] == 4
    bases = [e.base_index for e in audit]
    assert sorted(bases) == [4, 5]  # uniform split of 2 synthetics across 2 rows


# ---------------------------------------------------------------------------
# ENN and Tomek cleaning
# ---------------------------------------------------------------------------

@settings(max_examples=30, deadline=None)
@given(tables(min_rows=8, max_rows=40))
def test_enn_matches_bruteforce(table):
    expected = brute_enn(table.rows, table.y, k=3)
    got = enn_filter(table, k=3)
    assert table_equal(got, table.take(expected))


def test_enn_tie_keeps_row():
    # k=2 neighborhood votes 1/1 between two other classes: tie, row stays
    rows = np.array([[0.0], [1.0], [2.0]])
    table = build_table(rows, [0, 1, 2])
    out = enn_filter(table, k=2)
    assert out.n_rows == 3


def test_enn_removes_clear_outlier():
    rows = np.array([[0.0], [0.1], [0.2], [0.3], [10.0], [10.1], [10.2], [0.15]])
    table = build_table(rows, [0, 0, 0, 0, 1, 1, 1, 1])
    out = enn_filter(table, k=3)
    assert "r7" not in out.ids  # the label-1 row sitting inside the 0 cluster
    assert set(out.ids) == {"r0", "r1", "r2", "r3", "r4", "r5", "r6"}


def test_enn_too_few_rows():
    with pytest.raises(TooFewRows):
        enn_filter(build_table(np.zeros((3, 1)), [0, 1, 2]), k=3)


@settings(max_examples=30, deadline=None)
@given(tables(min_rows=6, max_rows=40))
def test_tomek_matches_bruteforce(table):
    got_table, got_pairs = tomek_filter(table)
    expected_pairs = brute_tomek(table.rows, table.y)
    assert [(p.i, p.j) for p in got_pairs] == expected_pairs
    counts = {lbl.code: c for lbl, c in table.class_counts().items()}
    drop = set()
    for i, j in expected_pairs:
        if counts[table.y[i]] > counts[table.y[j]]:
            drop.add(i)
        elif counts[table.y[j]] > counts[table.y[i]]:
            drop.add(j)
        # equal class sizes: drop neither
    keep = [i for i in range(table.n_rows) if i not in drop]
    assert table_equal(got_table, table.take(keep))


def test_tomek_hand_case():
    # two clusters and one adversarial pair straddling the boundary
    rows = np.array([[0.0], [1.0], [5.0], [5.2], [10.0], [11.0]])
    table = build_table(rows, [0, 0, 0, 1, 1, 1])
    filtered, pairs = tomek_filter(table)
    assert [(p.i, p.j) for p in pairs] == [(2, 3)]
    # classes are equal-sized: nothing removed
    assert filtered.n_rows == 6
    # now make class 0 larger: its member of the link is dropped
    rows2 = np.vstack([rows, [[0.5]]])
    table2 = build_table(rows2, [0, 0, 0, 1, 1, 1, 0])
    filtered2, pairs2 = tomek_filter(table2)
    assert [(p.i, p.j) for p in pairs2] == [(2, 3)]
    assert filtered2.ids == ["r0", "r1", "r3", "r4", "r5", "r6"]


# ---------------------------------------------------------------------------
# Compound methods and the dispatcher
# ---------------------------------------------------------------------------

def _imbalanced_table(seed=0):
    rng = np.random.default_rng(seed)
    rows = np.vstack([rng.normal(0, 1, (20, 3)),
                      rng.normal(4, 1, (7, 3)),
                      rng.normal(8, 1, (13, 3))])
    return build_table(rows, [0] * 20 + [1] * 7 + [2] * 13)


def test_smote_enn_composes():
    table = _imbalanced_table()
    direct = enn_filter(smote(table, 5, 1), 3)
    assert table_equal(smote_enn(table, k_smote=5, k_enn=3, seed=1), direct)


def test_smote_tomek_composes():
    table = _imbalanced_table()
    direct, _ = tomek_filter(smote(table, 5, 1))
    assert table_equal(smote_tomek(table, k_smote=5, seed=1), direct)


@pytest.mark.parametrize("name", ["none", "ros", "smote", "adasyn",
                                  "smote-enn", "smote-tomek", "tomek"])
def test_apply_method_dispatch(name):
    table = _imbalanced_table()
    spec = ResampleMethod.from_cli_name(name, k_neighbors=5, seed=2)
    out = apply_method(table, spec)
    if name == "none":
        assert table_equal(out, table) and out is not table
    elif name in ("ros", "smote", "adasyn"):
        target = max(table.class_counts().values())
        assert all(c == target for c in out.class_counts().values())
    else:
        assert out.n_rows <= max(table.n_rows,
                                 3 * max(table.class_counts().values()))
    # same spec, same bytes
    assert table_equal(apply_method(table, spec), out)


def test_method_enum_cli_names():
    assert {m.value for m in Method} == {"none", "ros", "smote", "adasyn",
                                         "smote-enn", "smote-tomek", "tomek"}
    assert ResampleMethod.from_cli_name("smote-enn").method is Method.SMOTE_ENN
    with pytest.raises(ValueError):
        ResampleMethod.from_cli_name("undersample")
