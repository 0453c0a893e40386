"""Per-address features and the train-fit standardization step.

Seventeen features summarize one address's transaction history: lifetime
and activity counts, in/out traffic, counterparty counts, receive-to-spend
delays, BTC volume totals and averages, and the largest 48-hour
income/expenditure gap. All time quantities are expressed in days.
"""

from __future__ import annotations

import bisect
import statistics
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import DimensionMismatch, EmptyHistory, TooFewRows
from .ingest import (
    SATOSHI_PER_BTC,
    SECONDS_PER_DAY,
    AddressHistory,
    Direction,
    LabeledTable,
    ScamLabel,
)

FEATURE_NAMES: tuple[str, ...] = (
    "lifetime_days",
    "active_days",
    "most_active_day",
    "num_in",
    "num_out",
    "in_vs_out",
    "addr_received",
    "addr_spent",
    "mean_delay_days",
    "median_delay_days",
    "min_delay_days",
    "max_delay_days",
    "total_received_btc",
    "total_spent_btc",
    "avg_received_btc",
    "avg_spent_btc",
    "diff_48h_btc",
)

WINDOW_48H_SECONDS = 2 * SECONDS_PER_DAY


@dataclass(frozen=True)
class FeatureVector:
    """The 17 features for one address, in canonical column order."""

    lifetime_days: float
    active_days: int
    most_active_day: int
    num_in: int
    num_out: int
    in_vs_out: float
    addr_received: int
    addr_spent: int
    mean_delay_days: float
    median_delay_days: float
    min_delay_days: float
    max_delay_days: float
    total_received_btc: float
    total_spent_btc: float
    avg_received_btc: float
    avg_spent_btc: float
    diff_48h_btc: float

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, name) for name in FEATURE_NAMES], dtype=np.float64)


def extract_features(history: AddressHistory) -> FeatureVector:
    """Compute all 17 features for one non-empty history.

    Day buckets are counted relative to the first transaction, which keeps
    every feature invariant under a constant time shift. Each outgoing
    transaction pairs with the latest incoming one at or before it; if no
    such pair exists all four delay features are 0.
    """
    records = history.records
    if not records:
        raise EmptyHistory(f"address {history.address!r} has no transactions")

    t0 = records[0].time
    t_last = records[-1].time
    lifetime_days = (t_last - t0) / SECONDS_PER_DAY

    day_counts: dict[int, int] = {}
    for r in records:
        day = (r.time - t0) // SECONDS_PER_DAY
        day_counts[day] = day_counts.get(day, 0) + 1
    active_days = len(day_counts)
    most_active_day = max(day_counts.values())

    ins = [r for r in records if r.direction is Direction.IN]
    outs = [r for r in records if r.direction is Direction.OUT]
    num_in, num_out = len(ins), len(outs)
    in_vs_out = num_in / num_out if num_out else float(num_in)

    received_from: set[str] = set()
    for r in ins:
        received_from |= r.counterparties
    sent_to: set[str] = set()
    for r in outs:
        sent_to |= r.counterparties

    in_times = [r.time for r in ins]
    delays = []
    for out in outs:
        pos = bisect.bisect_right(in_times, out.time)
        if pos:
            delays.append((out.time - in_times[pos - 1]) / SECONDS_PER_DAY)
    if delays:
        mean_delay = statistics.fmean(delays)
        median_delay = statistics.median(delays)
        min_delay = min(delays)
        max_delay = max(delays)
    else:
        mean_delay = median_delay = min_delay = max_delay = 0.0

    received_sat = sum(r.amount_satoshi for r in ins)
    spent_sat = sum(r.amount_satoshi for r in outs)
    total_received = received_sat / SATOSHI_PER_BTC
    total_spent = spent_sat / SATOSHI_PER_BTC
    avg_received = total_received / num_in if num_in else 0.0
    avg_spent = total_spent / num_out if num_out else 0.0

    return FeatureVector(
        lifetime_days=lifetime_days,
        active_days=active_days,
        most_active_day=most_active_day,
        num_in=num_in,
        num_out=num_out,
        in_vs_out=in_vs_out,
        addr_received=len(received_from),
        addr_spent=len(sent_to),
        mean_delay_days=mean_delay,
        median_delay_days=median_delay,
        min_delay_days=min_delay,
        max_delay_days=max_delay,
        total_received_btc=total_received,
        total_spent_btc=total_spent,
        avg_received_btc=avg_received,
        avg_spent_btc=avg_spent,
        diff_48h_btc=_largest_48h_gap(records) / SATOSHI_PER_BTC,
    )


def _largest_48h_gap(records) -> int:
    """Max |received - spent| in satoshi over the 48h window anchored at
    each record's time (window = [t, t+48h))."""
    times = [r.time for r in records]
    in_prefix = [0]
    out_prefix = [0]
    for r in records:
        amt_in = r.amount_satoshi if r.direction is Direction.IN else 0
        in_prefix.append(in_prefix[-1] + amt_in)
        out_prefix.append(out_prefix[-1] + (r.amount_satoshi - amt_in))
    best = 0
    for i, anchor in enumerate(times):
        end = bisect.bisect_left(times, anchor + WINDOW_48H_SECONDS)
        received = in_prefix[end] - in_prefix[i]
        spent = out_prefix[end] - out_prefix[i]
        best = max(best, abs(received - spent))
    return best


def featurize_all(
    items: Iterable[tuple[AddressHistory, ScamLabel]]
) -> LabeledTable:
    """Turn labeled histories into a LabeledTable, preserving input order."""
    rows, labels, ids = [], [], []
    for history, label in items:
        rows.append(extract_features(history).as_array())
        labels.append(label)
        ids.append(history.address)
    data = np.vstack(rows) if rows else np.empty((0, len(FEATURE_NAMES)))
    return LabeledTable(list(FEATURE_NAMES), data, labels, ids)


@dataclass(frozen=True)
class Scaler:
    """Per-column z-score parameters, fitted on training rows only."""

    means: np.ndarray
    stds: np.ndarray

    def to_dict(self) -> dict:
        return {"means": self.means.tolist(), "stds": self.stds.tolist()}

    @classmethod
    def from_dict(cls, doc: dict) -> "Scaler":
        return cls(np.asarray(doc["means"], dtype=np.float64),
                   np.asarray(doc["stds"], dtype=np.float64))


def scaler_fit(train: LabeledTable) -> Scaler:
    """Column means and population standard deviations; constant columns
    get the sentinel std 1 so standardization maps them to 0."""
    if train.n_rows < 2:
        raise TooFewRows(f"need at least 2 rows to fit a scaler, got {train.n_rows}")
    means = train.rows.mean(axis=0)
    stds = train.rows.std(axis=0)
    stds = np.where(stds == 0.0, 1.0, stds)
    return Scaler(means=means, stds=stds)


def scaler_apply(scaler: Scaler, table: LabeledTable) -> LabeledTable:
    """Replace every entry by (x - mean) / std; labels and ids unchanged."""
    if table.n_features != scaler.means.shape[0]:
        raise DimensionMismatch(
            f"table has {table.n_features} columns, scaler expects {scaler.means.shape[0]}"
        )
    standardized = (table.rows - scaler.means) / scaler.stds
    return LabeledTable(list(table.feature_names), standardized,
                        list(table.labels), list(table.ids))
