"""Ingestion: parse, validate, deduplicate and label per-address transaction
reports, and build the labeled train/test tables.

Address reports arrive as JSON documents (see ``parse_address_report``);
labels arrive as a two-column CSV. Sources are pluggable: a fixture
directory for recorded reports or an HTTP endpoint with bounded retries.
"""

from __future__ import annotations

import csv
import json
import logging
import threading
import time as _time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Protocol, Sequence

import numpy as np

from .errors import (
    DegenerateClass,
    DimensionMismatch,
    InvalidRecord,
    MalformedReport,
    SourceUnavailable,
    TooFewRows,
)

logger = logging.getLogger(__name__)

SATOSHI_PER_BTC = 10**8
SECONDS_PER_DAY = 86400


class Direction(Enum):
    IN = "in"
    OUT = "out"


class ScamLabel(Enum):
    """The three address classes."""

    NORMAL = "normal"
    PONZI = "ponzi"
    OTHER_SCAM = "other_scam"

    @property
    def code(self) -> int:
        return CLASS_ORDER.index(self)

    @classmethod
    def from_code(cls, code: int) -> "ScamLabel":
        return CLASS_ORDER[code]

    @classmethod
    def from_wire(cls, text: str) -> "ScamLabel":
        try:
            return cls(text.strip().lower())
        except ValueError:
            raise MalformedReport(f"unknown label {text!r}") from None


CLASS_ORDER: tuple[ScamLabel, ...] = (
    ScamLabel.NORMAL,
    ScamLabel.PONZI,
    ScamLabel.OTHER_SCAM,
)
N_CLASSES = len(CLASS_ORDER)


@dataclass(frozen=True)
class TxRecord:
    """One transaction touching an address.

    Amounts are integer satoshi so ingestion stays exact; conversion to
    BTC happens only at feature time.
    """

    txid: str
    time: int
    direction: Direction
    amount_satoshi: int
    counterparties: frozenset[str]

    def __post_init__(self):
        if self.amount_satoshi < 0:
            raise InvalidRecord(f"negative amount {self.amount_satoshi} in tx {self.txid!r}")
        if self.time < 0:
            raise InvalidRecord(f"negative time {self.time} in tx {self.txid!r}")
        if not self.counterparties:
            raise InvalidRecord(f"tx {self.txid!r} has no counterparties")


@dataclass(frozen=True)
class AddressHistory:
    """An address plus its transactions, sorted ascending by time."""

    address: str
    records: tuple[TxRecord, ...]

    def __post_init__(self):
        if not self.address:
            raise InvalidRecord("empty address")
        times = [r.time for r in self.records]
        if times != sorted(times):
            object.__setattr__(
                self, "records", tuple(sorted(self.records, key=lambda r: r.time))
            )


@dataclass(frozen=True)
class KeywordDictionary:
    """Lowercase terms used to screen advertisement text."""

    terms: frozenset[str]

    def __post_init__(self):
        if not self.terms:
            raise ValueError("keyword dictionary must not be empty")
        object.__setattr__(self, "terms", frozenset(t.lower() for t in self.terms))


DEFAULT_KEYWORDS = KeywordDictionary(
    frozenset({"ponzi", "profit", "hyip", "multiplier", "investment", "mlm"})
)


def keyword_screen(text: str, dictionary: KeywordDictionary = DEFAULT_KEYWORDS) -> bool:
    """True iff any dictionary term occurs case-insensitively in ``text``."""
    lowered = text.lower()
    return any(term in lowered for term in dictionary.terms)


@dataclass(eq=False)
class LabeledTable:
    """Feature matrix + labels + address ids; the dataset currency between
    modules. Rows are float64 and must stay finite."""

    feature_names: list[str]
    rows: np.ndarray
    labels: list[ScamLabel]
    ids: list[str]

    def __post_init__(self):
        self.feature_names = list(self.feature_names)
        self.rows = np.asarray(self.rows, dtype=np.float64)
        if self.rows.ndim != 2:
            self.rows = self.rows.reshape(-1, len(self.feature_names))
        n, d = self.rows.shape
        if d != len(self.feature_names):
            raise DimensionMismatch(f"table has {d} columns, expected {len(self.feature_names)}")
        if not (n == len(self.labels) == len(self.ids)):
            raise ValueError(
                f"row/label/id counts differ: {n}/{len(self.labels)}/{len(self.ids)}"
            )
        if n and not np.isfinite(self.rows).all():
            raise ValueError("table contains NaN or inf entries")

    @property
    def n_rows(self) -> int:
        return self.rows.shape[0]

    @property
    def n_features(self) -> int:
        return self.rows.shape[1]

    @property
    def y(self) -> np.ndarray:
        """Integer class codes, aligned with CLASS_ORDER."""
        return np.array([lbl.code for lbl in self.labels], dtype=np.intp)

    def class_counts(self) -> dict[ScamLabel, int]:
        counts = dict.fromkeys(CLASS_ORDER, 0)
        for lbl in self.labels:
            counts[lbl] += 1
        return counts

    def take(self, indices: Sequence[int]) -> "LabeledTable":
        idx = np.asarray(indices, dtype=np.intp)
        return LabeledTable(
            list(self.feature_names),
            self.rows[idx].copy(),
            [self.labels[i] for i in idx],
            [self.ids[i] for i in idx],
        )

    def copy(self) -> "LabeledTable":
        return LabeledTable(
            list(self.feature_names), self.rows.copy(), list(self.labels), list(self.ids)
        )


def table_equal(a: LabeledTable, b: LabeledTable) -> bool:
    return (
        a.feature_names == b.feature_names
        and np.array_equal(a.rows, b.rows)
        and a.labels == b.labels
        and a.ids == b.ids
    )


def concat_tables(first: LabeledTable, rows: np.ndarray, labels: list[ScamLabel],
                  ids: list[str]) -> LabeledTable:
    """Append a block of rows to a table, returning a new table."""
    if len(labels) == 0:
        return first.copy()
    block = np.asarray(rows, dtype=np.float64).reshape(len(labels), first.n_features)
    return LabeledTable(
        list(first.feature_names),
        np.vstack([first.rows, block]) if first.n_rows else block,
        list(first.labels) + labels,
        list(first.ids) + ids,
    )


# ---------------------------------------------------------------------------
# Address report parsing
# ---------------------------------------------------------------------------

def parse_address_report(data: bytes) -> AddressHistory:
    """Parse one address report.

    Schema: ``{"address": str, "txs": [{"txid": str, "time": int,
    "direction": "in"|"out", "amount_satoshi": int,
    "counterparties": [str]}]}``. Unknown fields are ignored.
    """
    try:
        doc = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedReport(f"bad JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise MalformedReport("report root must be an object")
    try:
        address = doc["address"]
        txs = doc["txs"]
    except KeyError as exc:
        raise MalformedReport(f"missing field {exc.args[0]!r}") from None
    if not isinstance(address, str) or not address:
        raise MalformedReport("address must be a non-empty string")
    if not isinstance(txs, list):
        raise MalformedReport("txs must be a list")

    records = []
    for i, tx in enumerate(txs):
        if not isinstance(tx, dict):
            raise MalformedReport(f"tx #{i} is not an object")
        try:
            txid = tx["txid"]
            when = tx["time"]
            direction = tx["direction"]
            amount = tx["amount_satoshi"]
            counterparties = tx["counterparties"]
        except KeyError as exc:
            raise MalformedReport(f"tx #{i} missing field {exc.args[0]!r}") from None
        if not isinstance(when, int) or isinstance(when, bool):
            raise MalformedReport(f"tx #{i} time must be an integer")
        if not isinstance(amount, int) or isinstance(amount, bool):
            raise MalformedReport(f"tx #{i} amount_satoshi must be an integer")
        try:
            parsed_dir = Direction(direction)
        except ValueError:
            raise InvalidRecord(f"tx #{i} has unknown direction {direction!r}") from None
        records.append(
            TxRecord(
                txid=str(txid),
                time=when,
                direction=parsed_dir,
                amount_satoshi=amount,
                counterparties=frozenset(str(c) for c in counterparties),
            )
        )
    records.sort(key=lambda r: r.time)
    return AddressHistory(address=address, records=tuple(records))


def serialize_address_report(history: AddressHistory) -> bytes:
    """Inverse of parse_address_report; counterparties are emitted sorted."""
    doc = {
        "address": history.address,
        "txs": [
            {
                "txid": r.txid,
                "time": r.time,
                "direction": r.direction.value,
                "amount_satoshi": r.amount_satoshi,
                "counterparties": sorted(r.counterparties),
            }
            for r in history.records
        ],
    }
    return json.dumps(doc, sort_keys=True).encode("utf-8")


# ---------------------------------------------------------------------------
# Report sources
# ---------------------------------------------------------------------------

class ReportSource(Protocol):
    def fetch(self, address: str) -> AddressHistory | None:
        """Return the parsed history, or None when the address is unknown."""
        ...


@dataclass
class FixtureSource:
    """Reads recorded reports from ``<root>/<address>.json``."""

    root: Path

    def __post_init__(self):
        self.root = Path(self.root)

    def fetch(self, address: str) -> AddressHistory | None:
        path = self.root / f"{address}.json"
        if not path.is_file():
            return None
        return parse_address_report(path.read_bytes())


class HttpSource:
    """Fetches ``<base_url>/<address>.json`` with bounded retries.

    Requests are serialized through a lock and spaced by ``min_interval``
    seconds. Transport failures retry with exponential backoff; after
    ``retries`` attempts SourceUnavailable is raised. A 404 means NotFound.
    """

    def __init__(self, base_url: str, retries: int = 3, backoff: float = 0.5,
                 timeout: float = 10.0, min_interval: float = 0.0, session=None):
        import requests

        self.base_url = base_url.rstrip("/")
        self.retries = retries
        self.backoff = backoff
        self.timeout = timeout
        self.min_interval = min_interval
        self.session = session if session is not None else requests.Session()
        self._lock = threading.Lock()
        self._last_request = 0.0

    def fetch(self, address: str) -> AddressHistory | None:
        import requests

        url = f"{self.base_url}/{address}.json"
        with self._lock:
            last_error: Exception | None = None
            for attempt in range(self.retries):
                wait = self.min_interval - (_time.monotonic() - self._last_request)
                if wait > 0:
                    _time.sleep(wait)
                try:
                    self._last_request = _time.monotonic()
                    response = self.session.get(url, timeout=self.timeout)
                except requests.RequestException as exc:
                    last_error = exc
                else:
                    if response.status_code == 404:
                        return None
                    if response.status_code == 200:
                        return parse_address_report(response.content)
                    last_error = SourceUnavailable(
                        f"unexpected status {response.status_code} for {url}"
                    )
                if attempt + 1 < self.retries:
                    _time.sleep(self.backoff * (2**attempt))
            raise SourceUnavailable(f"giving up on {url} after {self.retries} attempts: {last_error}")


def fetch_address_report(source: ReportSource, address: str) -> AddressHistory | None:
    """Resolve one address through a source; None signals NotFound."""
    return source.fetch(address)


# ---------------------------------------------------------------------------
# Validation, dedup and labeling
# ---------------------------------------------------------------------------

def validate_and_dedup(
    addresses: Iterable[tuple[str, ScamLabel]], source: ReportSource
) -> list[tuple[AddressHistory, ScamLabel]]:
    """Resolve labeled addresses to histories, dropping duplicates and
    addresses whose report is absent or empty.

    Duplicates resolve first-wins; a conflicting later label is logged and
    discarded.
    """
    chosen: dict[str, ScamLabel] = {}
    order: list[str] = []
    for address, label in addresses:
        if address in chosen:
            if chosen[address] is not label:
                logger.warning(
                    "label conflict for %s: keeping %s, ignoring %s",
                    address, chosen[address].value, label.value,
                )
            continue
        chosen[address] = label
        order.append(address)

    resolved: list[tuple[AddressHistory, ScamLabel]] = []
    for address in order:
        history = source.fetch(address)
        if history is None or not history.records:
            logger.info("dropping %s: no data", address)
            continue
        resolved.append((history, chosen[address]))
    return resolved


def read_labels_csv(path: Path | str) -> list[tuple[str, ScamLabel]]:
    """Read the ``address,label`` file."""
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"address", "label"} <= set(reader.fieldnames):
            raise MalformedReport(f"{path}: expected header address,label")
        for row in reader:
            out.append((row["address"], ScamLabel.from_wire(row["label"])))
    return out


def write_labels_csv(path: Path | str, labels: Iterable[tuple[str, ScamLabel]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["address", "label"])
        for address, label in labels:
            writer.writerow([address, label.value])


def write_histories_json(path: Path | str,
                         items: Sequence[tuple[AddressHistory, ScamLabel]]) -> None:
    """Persist labeled histories as one JSON document."""
    doc = [
        {
            "label": label.value,
            "report": json.loads(serialize_address_report(history).decode("utf-8")),
        }
        for history, label in items
    ]
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1), encoding="utf-8")


def read_histories_json(path: Path | str) -> list[tuple[AddressHistory, ScamLabel]]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    out = []
    for entry in doc:
        history = parse_address_report(json.dumps(entry["report"]).encode("utf-8"))
        out.append((history, ScamLabel.from_wire(entry["label"])))
    return out


# ---------------------------------------------------------------------------
# Table CSV round-trip and splitting
# ---------------------------------------------------------------------------

def write_table_csv(path: Path | str, table: LabeledTable) -> None:
    """Write ``address,label,<feature names>`` with exact float text."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["address", "label", *table.feature_names])
        for i in range(table.n_rows):
            writer.writerow(
                [table.ids[i], table.labels[i].value]
                + [repr(v) for v in table.rows[i].tolist()]
            )


def read_table_csv(path: Path | str) -> LabeledTable:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MalformedReport(f"{path}: empty file") from None
        if header[:2] != ["address", "label"]:
            raise MalformedReport(f"{path}: expected header address,label,<features>")
        names = header[2:]
        ids, labels, rows = [], [], []
        for row in reader:
            ids.append(row[0])
            labels.append(ScamLabel.from_wire(row[1]))
            rows.append([float(v) for v in row[2:]])
    data = np.array(rows, dtype=np.float64) if rows else np.empty((0, len(names)))
    return LabeledTable(names, data, labels, ids)


def split(table: LabeledTable, ratio: float, seed: int) -> tuple[LabeledTable, LabeledTable]:
    """Stratified split: per class, round(ratio * count) rows go to train,
    the remainder to test. Deterministic for a fixed seed."""
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"ratio must lie in (0,1), got {ratio}")
    if table.n_rows == 0:
        raise TooFewRows("cannot split an empty table")
    counts = table.class_counts()
    for label, count in counts.items():
        if 0 < count < 2:
            raise DegenerateClass(f"class {label.value} has only {count} row")

    rng = np.random.default_rng(seed)
    y = table.y
    train_idx: list[int] = []
    test_idx: list[int] = []
    for label in CLASS_ORDER:
        members = np.flatnonzero(y == label.code)
        if members.size == 0:
            continue
        shuffled = rng.permutation(members)
        n_train = round(ratio * members.size)
        train_idx.extend(shuffled[:n_train].tolist())
        test_idx.extend(shuffled[n_train:].tolist())
    return table.take(sorted(train_idx)), table.take(sorted(test_idx))
