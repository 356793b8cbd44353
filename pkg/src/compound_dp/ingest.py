"""Dated event records with optional planar coordinates.

Input is UTF-8 delimited text with a header row. A date is either an ISO
calendar date (``2021-03-04``) or an integer day offset; one file must use
a single kind. Coordinates come as an ``x``/``y`` pair or not at all.
"""

from __future__ import annotations

import csv
import datetime as dt
import logging
import math
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

log = logging.getLogger(__name__)

ZERO_GAP_DAYS = 0.5


@dataclass(frozen=True)
class Event:
    date: dt.date | int
    x: float | None = None
    y: float | None = None
    id: str | None = None

    @property
    def day(self) -> int:
        return self.date.toordinal() if isinstance(self.date, dt.date) else int(self.date)

    @property
    def has_coords(self) -> bool:
        return self.x is not None


@dataclass(frozen=True)
class Dataset:
    events: tuple[Event, ...]
    source: str = ""
    rows_read: int = 0
    rejected: tuple[str, ...] = field(default=())

    def __len__(self):
        return len(self.events)

    def days(self) -> np.ndarray:
        return np.array([e.day for e in self.events], dtype=float)

    def coordinates(self) -> tuple[np.ndarray, np.ndarray]:
        """``(xy, index)``: rows with coordinates and their positions in ``events``."""
        idx = np.array([i for i, e in enumerate(self.events) if e.has_coords], dtype=int)
        xy = np.array([[self.events[i].x, self.events[i].y] for i in idx], dtype=float).reshape(-1, 2)
        return xy, idx


def parse_date(text: str) -> dt.date | int:
    s = text.strip()
    if not s:
        raise ValueError("empty date")
    try:
        return int(s)
    except ValueError:
        pass
    if "T" in s or ":" in s or " " in s:
        raise ValueError(f"sub-day timestamp {s!r}; dates must have day resolution")
    try:
        return dt.date.fromisoformat(s)
    except ValueError:
        raise ValueError(f"unparseable date {s!r}") from None


def _parse_coord(text, name):
    s = (text or "").strip()
    if s == "" or s.upper() in ("NA", "NAN"):
        return None
    try:
        v = float(s)
    except ValueError:
        raise ValueError(f"unparseable {name} {s!r}") from None
    if not math.isfinite(v):
        raise ValueError(f"non-finite {name} {s!r}")
    return v


def read_events(path, date_col: str = "date", x_col: str = "x", y_col: str = "y",
                id_col: str | None = "id", strict: bool = True, delimiter: str | None = None) -> Dataset:
    """Read events from a delimited file.

    Each rejected row produces one diagnostic on stderr. With ``strict`` any
    rejection raises :class:`DataError`; otherwise the rejected rows are left
    out and listed in ``Dataset.rejected``.
    """
    path = os.fspath(path)
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror or exc}") from exc
    if not text.strip():
        raise DataError(f"{path}: file is empty")
    if delimiter is None:
        try:
            delimiter = csv.Sniffer().sniff(text.splitlines()[0], delimiters=",;\t").delimiter
        except csv.Error:
            delimiter = ","
    reader = csv.DictReader(text.splitlines(), delimiter=delimiter)
    header = reader.fieldnames or []
    if date_col not in header:
        raise DataError(f"{path}: missing date column {date_col!r} (header: {', '.join(header)})")
    has_x, has_y = x_col in header, y_col in header
    if has_x != has_y:
        raise DataError(f"{path}: coordinate columns must come as a pair, found only "
                        f"{x_col if has_x else y_col!r}")

    events, rejected = [], []
    nrows = 0
    for row_no, row in enumerate(reader, start=2):
        nrows += 1
        try:
            date = parse_date(row.get(date_col) or "")
            x = _parse_coord(row.get(x_col), "x") if has_x else None
            y = _parse_coord(row.get(y_col), "y") if has_y else None
            if (x is None) != (y is None):
                raise ValueError("x and y must both be present or both missing")
        except ValueError as exc:
            msg = f"{path}:{row_no}: {exc}"
            print(msg, file=sys.stderr)
            rejected.append(msg)
            continue
        ident = None
        if id_col and id_col in header:
            ident = (row.get(id_col) or "").strip() or None
        events.append(Event(date, x, y, ident))

    if nrows == 0:
        raise DataError(f"{path}: no data rows")
    kinds = {isinstance(e.date, int) for e in events}
    if len(kinds) > 1:
        raise DataError(f"{path}: mixes calendar dates and integer day offsets")
    if rejected and strict:
        raise DataError(f"{path}: {len(rejected)} of {nrows} rows rejected; first: {rejected[0]}")
    return Dataset(tuple(events), path, nrows, tuple(rejected))


def write_events(ds: Dataset, path, delimiter: str = ",") -> None:
    """Write ``ds`` so that :func:`read_events` restores the same events."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter=delimiter)
        w.writerow(["date", "x", "y", "id"])
        for e in ds.events:
            date = e.date.isoformat() if isinstance(e.date, dt.date) else str(e.date)
            w.writerow([date, "" if e.x is None else repr(e.x), "" if e.y is None else repr(e.y), e.id or ""])


def interarrivals(ds: Dataset, zero_gap: float = ZERO_GAP_DAYS) -> tuple[np.ndarray, int]:
    """Successive gaps in days between sorted event dates.

    Same-day events give a zero gap, which is replaced by ``zero_gap``; the
    number of replacements is returned alongside the gaps.
    """
    if len(ds) < 2:
        raise DataError(f"need at least 2 events for interarrival times, got {len(ds)}")
    gaps = np.diff(np.sort(ds.days()))
    zeros = gaps == 0
    n_adj = int(zeros.sum())
    if n_adj:
        log.warning("%d same-day gaps replaced by %g day", n_adj, zero_gap)
        gaps[zeros] = zero_gap
    return gaps, n_adj


def read_pairs(path, time_col: str = "time", mark_col: str = "mark") -> np.ndarray:
    """Observed (mark, interarrival) pairs as an ``(n, 2)`` array."""
    path = os.fspath(path)
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror or exc}") from exc
    if not rows:
        raise DataError(f"{path}: no data rows")
    for col in (time_col, mark_col):
        if col not in rows[0]:
            raise DataError(f"{path}: missing column {col!r}")
    out = np.empty((len(rows), 2))
    for i, row in enumerate(rows):
        try:
            out[i] = float(row[mark_col]), float(row[time_col])
        except (TypeError, ValueError):
            raise DataError(f"{path}:{i + 2}: unparseable time or mark") from None
        if not np.all(np.isfinite(out[i])):
            raise DataError(f"{path}:{i + 2}: non-finite value")
        if out[i, 1] <= 0:
            raise DataError(f"{path}:{i + 2}: interarrival time must be positive")
    return out


__all__ = ["Event", "Dataset", "read_events", "write_events", "interarrivals", "read_pairs", "parse_date"]
