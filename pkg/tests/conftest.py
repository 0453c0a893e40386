"""Shared strategies and builders for the test suite."""

from __future__ import annotations

import numpy as np
from hypothesis import strategies as st

from scamlens.ingest import (
    CLASS_ORDER,
    AddressHistory,
    Direction,
    LabeledTable,
    ScamLabel,
    TxRecord,
)


def make_record(txid: str, time: int, direction: Direction, satoshi: int,
                counterparties=("cp",)) -> TxRecord:
    return TxRecord(txid=txid, time=time, direction=direction,
                    amount_satoshi=satoshi, counterparties=frozenset(counterparties))


def make_history(address: str, specs) -> AddressHistory:
    """specs: iterable of (time, 'in'|'out', satoshi) or
    (time, 'in'|'out', satoshi, counterparties)."""
    records = []
    for i, spec in enumerate(specs):
        time, direction, satoshi = spec[:3]
        cps = spec[3] if len(spec) > 3 else (f"cp{i}",)
        records.append(make_record(f"tx{i}", time, Direction(direction), satoshi, cps))
    return AddressHistory(address=address, records=tuple(records))


@st.composite
def histories(draw, min_records=1, max_records=12):
    n = draw(st.integers(min_records, max_records))
    specs = []
    for _ in range(n):
        time = draw(st.integers(0, 10_000_000))
        direction = draw(st.sampled_from(["in", "out"]))
        satoshi = draw(st.integers(0, 10**10))
        n_cp = draw(st.integers(1, 3))
        cps = tuple(f"c{draw(st.integers(0, 9))}" for _ in range(n_cp))
        specs.append((time, direction, satoshi, cps))
    address = "a" + str(draw(st.integers(0, 10**6)))
    return make_history(address, specs)


def build_table(rows: np.ndarray, codes) -> LabeledTable:
    rows = np.asarray(rows, dtype=np.float64)
    labels = [CLASS_ORDER[int(c)] for c in codes]
    names = [f"f{j}" for j in range(rows.shape[1])]
    ids = [f"r{i}" for i in range(rows.shape[0])]
    return LabeledTable(names, rows, labels, ids)


@st.composite
def tables(draw, min_rows=6, max_rows=40, min_cols=2, max_cols=5,
           min_per_class=2, n_classes=None):
    """Random finite table with at least two classes present."""
    d = draw(st.integers(min_cols, max_cols))
    k = n_classes if n_classes is not None else draw(st.integers(2, 3))
    counts = [draw(st.integers(min_per_class,
                               max(min_per_class, max_rows // k)))
              for _ in range(k)]
    if sum(counts) < min_rows:
        counts[0] += min_rows - sum(counts)
    rng = np.random.default_rng(draw(st.integers(0, 2**32 - 1)))
    codes = []
    for cls, count in enumerate(counts):
        codes.extend([cls] * count)
    rows = rng.normal(size=(len(codes), d))
    return build_table(rows, codes)


def class_labels(code: int) -> ScamLabel:
    return CLASS_ORDER[code]
