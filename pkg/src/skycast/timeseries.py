"""Timestamp-indexed column store for station data.

A :class:`TimeSeriesTable` holds named real-valued columns on a strictly
regular UTC grid. Missing observations are represented as NaN, so a column
always has exactly one entry per grid point. Rows absent from a source file
appear as all-NaN grid rows rather than being dropped, which keeps index
arithmetic (lags, rolling windows, horizon lookups) trivial everywhere else.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np

from .errors import DataError

__all__ = [
    "TimeSeriesTable",
    "GapReport",
    "parse_csv",
    "write_csv",
    "detect_gaps",
    "parse_timestamp",
    "format_timestamp",
]

TIMESTAMP_COLUMN = "timestamp"


def parse_timestamp(text: str) -> int:
    """Parse an ISO-8601 instant to epoch seconds. Naive times are UTC."""
    t = text.strip()
    if t.endswith("Z"):
        t = t[:-1] + "+00:00"
    dt = datetime.fromisoformat(t)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(dt.timestamp())


def format_timestamp(epoch_s: int) -> str:
    """Epoch seconds to the canonical ISO-8601 UTC form used in exports."""
    dt = datetime.fromtimestamp(int(epoch_s), tz=timezone.utc)
    return dt.strftime("%Y-%m-%dT%H:%M:%SZ")


@dataclass
class TimeSeriesTable:
    """Regular-cadence UTC table: timestamps plus named float64 columns.

    Invariants (checked by :meth:`validate`):
      * timestamps strictly increasing with constant spacing ``cadence_s``
      * every column has exactly ``len(timestamps)`` entries
      * column names unique (guaranteed by the dict) and non-empty

    NaN entries mark missing observations. Instances are treated as
    immutable after construction; derived tables are new objects.
    """

    timestamps: np.ndarray          # int64 epoch seconds, shape (N,)
    columns: dict[str, np.ndarray]  # name -> float64 array, shape (N,)
    cadence_s: int

    def __post_init__(self) -> None:
        self.timestamps = np.asarray(self.timestamps, dtype=np.int64)
        self.columns = {k: np.asarray(v, dtype=np.float64) for k, v in self.columns.items()}
        self.validate()

    def validate(self) -> None:
        if self.cadence_s <= 0:
            raise DataError(f"cadence_s must be positive, got {self.cadence_s}")
        n = len(self.timestamps)
        if n > 1:
            deltas = np.diff(self.timestamps)
            if not np.all(deltas == self.cadence_s):
                bad = int(np.argmax(deltas != self.cadence_s))
                raise DataError(
                    f"timestamps are not a regular {self.cadence_s}s grid "
                    f"(spacing {deltas[bad]}s after row {bad})"
                )
        for name, col in self.columns.items():
            if not name:
                raise DataError("empty column name")
            if col.shape != (n,):
                raise DataError(
                    f"column {name!r} has {col.shape[0] if col.ndim else 0} entries, expected {n}"
                )

    def __len__(self) -> int:
        return len(self.timestamps)

    @property
    def column_names(self) -> list[str]:
        return list(self.columns)

    def column(self, name: str) -> np.ndarray:
        try:
            return self.columns[name]
        except KeyError:
            raise DataError(f"unknown column {name!r}") from None

    def index_of(self, epoch_s: int) -> int:
        """Grid index of an instant; raises if off-grid or out of range."""
        if len(self.timestamps) == 0:
            raise DataError("empty table")
        off = int(epoch_s) - int(self.timestamps[0])
        idx, rem = divmod(off, self.cadence_s)
        if rem != 0 or idx < 0 or idx >= len(self.timestamps):
            raise DataError(f"instant {format_timestamp(epoch_s)} not on table grid")
        return int(idx)

    def with_columns(self, new: dict[str, np.ndarray]) -> "TimeSeriesTable":
        """New table sharing the grid, with columns added or replaced."""
        cols = dict(self.columns)
        for name, values in new.items():
            cols[name] = np.asarray(values, dtype=np.float64)
        return TimeSeriesTable(self.timestamps, cols, self.cadence_s)

    def select(self, names: list[str]) -> "TimeSeriesTable":
        return TimeSeriesTable(
            self.timestamps, {n: self.column(n) for n in names}, self.cadence_s
        )


@dataclass
class GapReport:
    """Missing-data summary: closed intervals of grid instants with any gap.

    ``intervals`` are ``(start_epoch_s, end_epoch_s)`` pairs, disjoint and
    sorted; ``affected_columns`` lists, per interval, which required columns
    are missing somewhere inside it. ``coverage_fraction`` is the fraction
    of grid rows untouched by any interval.
    """

    intervals: list[tuple[int, int]] = field(default_factory=list)
    affected_columns: list[list[str]] = field(default_factory=list)
    coverage_fraction: float = 1.0

    def overlaps(self, start_s: int, end_s: int) -> bool:
        """True if any gap interval intersects the closed span [start, end]."""
        for a, b in self.intervals:
            if a <= end_s and start_s <= b:
                return True
        return False


def parse_csv(
    path: str,
    schema: dict[str, str] | None = None,
    cadence_s: int = 60,
    strict: bool = False,
) -> TimeSeriesTable:
    """Parse a station CSV export onto a complete regular grid.

    The file must have a header row containing ``timestamp`` (ISO-8601, UTC)
    plus any number of numeric columns. ``schema`` optionally renames file
    headers to canonical column names; under ``strict`` any header absent
    from the schema is rejected. Rows missing from the file become all-NaN
    grid rows between the file's min and max timestamps. Empty fields and
    the literal ``NaN`` (any case) are treated as missing.
    """
    schema = schema or {}
    rows: list[tuple[int, list[float]]] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file, header row required") from None
        header = [h.strip() for h in header]
        if TIMESTAMP_COLUMN not in header:
            raise DataError(f"{path}: no {TIMESTAMP_COLUMN!r} column in header")
        ts_pos = header.index(TIMESTAMP_COLUMN)
        names: list[str] = []
        positions: list[int] = []
        for pos, raw_name in enumerate(header):
            if pos == ts_pos:
                continue
            if raw_name in schema:
                names.append(schema[raw_name])
            elif strict and schema:
                raise DataError(f"{path}: unknown column {raw_name!r} under strict schema")
            else:
                names.append(raw_name)
            positions.append(pos)
        if len(set(names)) != len(names):
            raise DataError(f"{path}: duplicate column names after schema mapping")

        for lineno, record in enumerate(reader, start=2):
            if not record or all(not f.strip() for f in record):
                continue
            try:
                ts = parse_timestamp(record[ts_pos])
            except (ValueError, IndexError):
                raise DataError(
                    f"{path}:{lineno}: malformed timestamp "
                    f"{record[ts_pos] if ts_pos < len(record) else ''!r}"
                ) from None
            values = []
            for pos in positions:
                f = record[pos].strip() if pos < len(record) else ""
                if not f or f.lower() == "nan":
                    values.append(math.nan)
                else:
                    try:
                        values.append(float(f))
                    except ValueError:
                        raise DataError(
                            f"{path}:{lineno}: non-numeric value {f!r}"
                        ) from None
            rows.append((ts, values))

    if not rows:
        raise DataError(f"{path}: no data rows")

    rows.sort(key=lambda r: r[0])
    t0, t1 = rows[0][0], rows[-1][0]
    span = t1 - t0
    if span % cadence_s != 0:
        raise DataError(f"{path}: timestamps do not align to a {cadence_s}s grid")
    n = span // cadence_s + 1
    timestamps = t0 + cadence_s * np.arange(n, dtype=np.int64)
    data = np.full((n, len(names)), np.nan)
    seen = np.zeros(n, dtype=bool)
    for ts, values in rows:
        off, rem = divmod(ts - t0, cadence_s)
        if rem != 0:
            raise DataError(
                f"{path}: timestamp {format_timestamp(ts)} off the {cadence_s}s grid"
            )
        if seen[off]:
            raise DataError(f"{path}: duplicate timestamp {format_timestamp(ts)}")
        seen[off] = True
        data[off] = values
    columns = {name: data[:, j].copy() for j, name in enumerate(names)}
    return TimeSeriesTable(timestamps, columns, cadence_s)


def write_csv(table: TimeSeriesTable, path: str) -> None:
    """Write a table back to the canonical CSV form (round-trip exact).

    Values use ``repr`` (shortest exact decimal), NaN becomes an empty
    field, so ``parse_csv(write_csv(t)) == t`` bit-for-bit.
    """
    names = table.column_names
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([TIMESTAMP_COLUMN] + names)
        cols = [table.columns[n] for n in names]
        for i, ts in enumerate(table.timestamps):
            row = [format_timestamp(int(ts))]
            for col in cols:
                v = col[i]
                row.append("" if math.isnan(v) else repr(float(v)))
            writer.writerow(row)


def detect_gaps(table: TimeSeriesTable, required_columns: list[str]) -> GapReport:
    """Find every grid instant where any required column is missing.

    Consecutive missing instants merge into one closed interval. Coverage
    is the fraction of rows where all required columns are present.
    """
    missing = np.zeros(len(table), dtype=bool)
    per_column: dict[str, np.ndarray] = {}
    for name in required_columns:
        m = np.isnan(table.column(name))
        per_column[name] = m
        missing |= m

    intervals: list[tuple[int, int]] = []
    affected: list[list[str]] = []
    ts = table.timestamps
    i = 0
    n = len(table)
    while i < n:
        if missing[i]:
            j = i
            while j + 1 < n and missing[j + 1]:
                j += 1
            intervals.append((int(ts[i]), int(ts[j])))
            affected.append(
                sorted(name for name, m in per_column.items() if m[i : j + 1].any())
            )
            i = j + 1
        else:
            i += 1
    coverage = 1.0 if n == 0 else float(1.0 - missing.sum() / n)
    return GapReport(intervals=intervals, affected_columns=affected, coverage_fraction=coverage)
