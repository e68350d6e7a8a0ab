"""Meter data ingestion, validation and netting.

Two CSV layouts are accepted, both with a header ``timestamp,<member>,...``:

* **signed** – one value per member and period, positive for consumption and
  negative for injection.  Such meters already net behind-the-meter flows, so
  the netted channels equal the raw ones.
* **dual** – separate consumption and production files with identical
  headers; netting is applied here.

Energies are kWh.  Timestamps are ISO 8601 and normalised to UTC; naive
timestamps are read as UTC unless an explicit zone is supplied.
"""

from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from zoneinfo import ZoneInfo, ZoneInfoNotFoundError

import numpy as np

from recsettle.errors import ConfigError, ContractError, ParseError, SchemaError

DEFAULT_CADENCE = 900


@dataclass(frozen=True)
class PeriodGrid:
    """Regular grid of metering periods.

    Attributes:
        start: first period timestamp (timezone-aware, UTC).
        cadence: period length in seconds.
        count: number of periods T.
    """

    start: datetime
    cadence: int = DEFAULT_CADENCE
    count: int = 1

    def __post_init__(self):
        if self.start.tzinfo is None:
            object.__setattr__(self, "start", self.start.replace(tzinfo=timezone.utc))
        else:
            object.__setattr__(self, "start", self.start.astimezone(timezone.utc))
        if int(self.cadence) <= 0:
            raise ConfigError("grid cadence must be positive")
        if int(self.count) < 1:
            raise ConfigError("grid needs at least one period")
        object.__setattr__(self, "cadence", int(self.cadence))
        object.__setattr__(self, "count", int(self.count))

    def timestamp(self, t: int) -> datetime:
        if not 0 <= t < self.count:
            raise ContractError(f"period index {t} outside 0..{self.count - 1}")
        return self.start + timedelta(seconds=self.cadence * t)

    def timestamps(self) -> list[datetime]:
        return [self.start + timedelta(seconds=self.cadence * t) for t in range(self.count)]

    def index_of(self, ts: datetime) -> int | None:
        """Period index of ``ts`` or ``None`` when it is not on the grid."""
        offset = (ts - self.start).total_seconds()
        t, rem = divmod(offset, self.cadence)
        if rem != 0 or not 0 <= t < self.count:
            return None
        return int(t)


@dataclass(frozen=True, eq=False)
class MeterSeries:
    """Consumption/production channels for every (period, member), shape ``(T, I)``."""

    members: tuple[str, ...]
    grid: PeriodGrid
    consumption: np.ndarray
    production: np.ndarray
    net_consumption: np.ndarray
    net_production: np.ndarray

    @classmethod
    def from_raw(cls, members, consumption, production, grid: PeriodGrid | None = None) -> "MeterSeries":
        """Build a series from raw channels, netting them per period and member."""
        C = np.array(consumption, dtype=float, ndmin=2)
        P = np.array(production, dtype=float, ndmin=2)
        members = tuple(str(m) for m in members)
        _check_channels(C, P, members)
        if grid is None:
            grid = PeriodGrid(datetime(2000, 1, 1, tzinfo=timezone.utc), DEFAULT_CADENCE, C.shape[0])
        elif grid.count != C.shape[0]:
            raise SchemaError(f"grid has {grid.count} periods but data has {C.shape[0]}")
        Cn, Pn = net(C, P)
        return cls._frozen(members, grid, C, P, Cn, Pn)

    @classmethod
    def from_signed(cls, members, values, grid: PeriodGrid | None = None) -> "MeterSeries":
        """Build a series from signed net readings (positive = consumption)."""
        X = np.array(values, dtype=float, ndmin=2)
        C = np.maximum(X, 0.0) + 0.0
        P = np.maximum(-X, 0.0) + 0.0
        return cls.from_raw(members, C, P, grid)

    @classmethod
    def _frozen(cls, members, grid, *arrays):
        frozen = []
        for a in arrays:
            a = np.ascontiguousarray(a, dtype=float)
            a.setflags(write=False)
            frozen.append(a)
        return cls(members, grid, *frozen)

    @property
    def T(self) -> int:
        return self.consumption.shape[0]

    @property
    def I(self) -> int:  # noqa: E743 - conventional member-count symbol
        return self.consumption.shape[1]

    def member_index(self, name: str) -> int:
        try:
            return self.members.index(name)
        except ValueError:
            raise SchemaError(f"unknown member {name!r}") from None

    def __eq__(self, other):
        if not isinstance(other, MeterSeries):
            return NotImplemented
        return (self.members == other.members and self.grid == other.grid
                and all(np.array_equal(a, b) for a, b in zip(self._channels(), other._channels())))

    def _channels(self):
        return (self.consumption, self.production, self.net_consumption, self.net_production)


def net(C: np.ndarray, P: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Remove behind-the-meter self-consumption: returns ``(max(0, C-P), max(0, P-C))``."""
    d = np.asarray(C, dtype=float) - np.asarray(P, dtype=float)
    return np.maximum(d, 0.0) + 0.0, np.maximum(-d, 0.0) + 0.0


def totals(series: MeterSeries, t: int) -> tuple[float, float]:
    """Total net consumption and total net production of period ``t``."""
    if not 0 <= t < series.T:
        raise ContractError(f"period index {t} outside 0..{series.T - 1}")
    return float(series.net_consumption[t].sum()), float(series.net_production[t].sum())


# -- CSV ingestion ---------------------------------------------------------------

def ingest_signed(source, grid: PeriodGrid | None = None, tz: str | None = None) -> MeterSeries:
    """Read a signed single-channel CSV (positive consumption, negative injection).

    Args:
        source: path or text file object.
        grid: expected period grid; inferred from the timestamps when omitted.
        tz: IANA zone for naive timestamps (default: naive means UTC).

    Raises:
        SchemaError: bad header, timestamp gap, duplicate or misalignment.
        ParseError: a cell is missing, non-numeric or non-finite.
    """
    members, grid, values = _read_table(source, grid, tz, allow_negative=True)
    return MeterSeries.from_signed(members, values, grid)


def ingest_dual(consumption_source, production_source, grid: PeriodGrid | None = None,
                tz: str | None = None) -> MeterSeries:
    """Read separate consumption and production CSVs and net them.

    Raises:
        SchemaError: member sets or grids of the two files differ.
        ParseError: missing, non-numeric or negative cells.
    """
    members_c, grid_c, C = _read_table(consumption_source, grid, tz, allow_negative=False)
    members_p, grid_p, P = _read_table(production_source, grid or grid_c, tz, allow_negative=False)
    if members_c != members_p:
        raise SchemaError(f"member sets differ between consumption {list(members_c)} "
                          f"and production {list(members_p)} files")
    if grid_c != grid_p:
        raise SchemaError("consumption and production files cover different period grids")
    return MeterSeries.from_raw(members_c, C, P, grid_c)


def export_signed(series: MeterSeries, target=None) -> str:
    """Write ``C - P`` per cell in the signed layout; returns the CSV text.

    Values use the shortest round-tripping float representation, so
    ``ingest_signed(export_signed(s))`` reproduces a signed-convention series.
    """
    return _write_table(series, series.consumption - series.production, target)


def export_dual(series: MeterSeries, consumption_target=None, production_target=None) -> tuple[str, str]:
    return (_write_table(series, series.consumption, consumption_target),
            _write_table(series, series.production, production_target))


def format_timestamp(ts: datetime) -> str:
    return ts.astimezone(timezone.utc).isoformat().replace("+00:00", "Z")


def parse_timestamp(text: str, zone=None) -> datetime:
    """Parse an ISO 8601 timestamp and normalise it to UTC."""
    s = text.strip()
    if s.endswith(("Z", "z")):
        s = s[:-1] + "+00:00"
    ts = datetime.fromisoformat(s)
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=zone or timezone.utc)
    return ts.astimezone(timezone.utc)


def _zone(tz: str | None):
    if tz is None:
        return None
    try:
        return ZoneInfo(tz)
    except (ZoneInfoNotFoundError, ValueError):
        raise ConfigError(f"unknown time zone {tz!r}") from None


def _open_text(source):
    if hasattr(source, "read"):
        return source, False
    if isinstance(source, (str, os.PathLike)):
        try:
            return open(source, newline="", encoding="utf-8"), True
        except OSError as exc:
            raise SchemaError(f"cannot read {source}: {exc.strerror}") from None
    raise ContractError("source must be a path or a text file object")


def _read_table(source, grid: PeriodGrid | None, tz: str | None, allow_negative: bool):
    zone = _zone(tz)
    fh, owned = _open_text(source)
    try:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError("file is empty (header row expected)") from None
        header = [h.strip() for h in header]
        if header and header[0].startswith("﻿"):
            header[0] = header[0][1:]
        if len(header) < 2 or header[0].lower() != "timestamp":
            raise SchemaError("header must be 'timestamp,<member>,...'")
        members = tuple(header[1:])
        if any(not m for m in members):
            raise SchemaError("empty member name in header")
        if len(set(members)) != len(members):
            dup = sorted({m for m in members if members.count(m) > 1})
            raise SchemaError(f"duplicate member columns {dup}")
        stamps, rows = [], []
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise SchemaError(f"row {line_no}: expected {len(header)} cells, found {len(row)}")
            try:
                ts = parse_timestamp(row[0], zone)
            except ValueError:
                raise ParseError(f"row {line_no}, column timestamp: cannot parse {row[0]!r}") from None
            vals = []
            for name, cell in zip(members, row[1:]):
                vals.append(_parse_cell(cell, line_no, name, allow_negative))
            stamps.append((line_no, ts))
            rows.append(vals)
    finally:
        if owned:
            fh.close()
    if not rows:
        raise SchemaError("no data rows")
    grid = _align(stamps, grid)
    return members, grid, np.asarray(rows, dtype=float)


def _parse_cell(cell: str, line_no: int, member: str, allow_negative: bool) -> float:
    text = cell.strip()
    if not text:
        raise ParseError(f"row {line_no}, column {member}: missing value")
    try:
        value = float(text)
    except ValueError:
        raise ParseError(f"row {line_no}, column {member}: not a number {text!r}") from None
    if not math.isfinite(value):
        raise ParseError(f"row {line_no}, column {member}: non-finite value {text!r}")
    if value < 0 and not allow_negative:
        raise ParseError(f"row {line_no}, column {member}: negative energy {text!r} in a dual-channel file")
    return value + 0.0


def _align(stamps, grid: PeriodGrid | None) -> PeriodGrid:
    if grid is None:
        first = stamps[0][1]
        cadence = DEFAULT_CADENCE
        if len(stamps) > 1:
            delta = (stamps[1][1] - first).total_seconds()
            if delta <= 0 or delta != int(delta):
                raise SchemaError(f"row {stamps[1][0]}: timestamp does not advance from the previous row")
            cadence = int(delta)
        grid = PeriodGrid(first, cadence, len(stamps))
    for t, (line_no, ts) in enumerate(stamps):
        idx = grid.index_of(ts)
        if idx is None:
            raise SchemaError(f"row {line_no}: timestamp {format_timestamp(ts)} is not on the "
                              f"{grid.cadence}s grid starting {format_timestamp(grid.start)}")
        if idx < t:
            raise SchemaError(f"row {line_no}: duplicate or out-of-order timestamp {format_timestamp(ts)}")
        if idx > t:
            raise SchemaError(f"row {line_no}: gap before timestamp {format_timestamp(ts)}")
    if len(stamps) != grid.count:
        raise SchemaError(f"expected {grid.count} periods, found {len(stamps)}")
    return grid


def _write_table(series: MeterSeries, values: np.ndarray, target) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["timestamp", *series.members])
    for ts, row in zip(series.grid.timestamps(), values):
        w.writerow([format_timestamp(ts), *(repr(float(v) + 0.0) for v in row)])
    text = buf.getvalue()
    if target is not None:
        if hasattr(target, "write"):
            target.write(text)
        else:
            with open(target, "w", newline="", encoding="utf-8") as fh:
                fh.write(text)
    return text


def _check_channels(C, P, members):
    if C.ndim != 2 or C.shape != P.shape:
        raise SchemaError(f"consumption {C.shape} and production {P.shape} shapes differ")
    if C.shape[1] != len(members):
        raise SchemaError(f"{len(members)} members but {C.shape[1]} data columns")
    if len(set(members)) != len(members):
        raise SchemaError("member names must be unique")
    if C.shape[0] < 1:
        raise SchemaError("at least one period is required")
    if not (np.all(np.isfinite(C)) and np.all(np.isfinite(P))):
        raise ParseError("energies must be finite")
    if np.any(C < 0) or np.any(P < 0):
        raise ParseError("raw consumption and production must be non-negative")
