"""Event data model, slicing, spatio-temporal embedding and file I/O.

Events are held column-wise in numpy arrays: ``t`` (int64, microseconds),
``x``/``y`` (int32, pixels) and ``p`` (int8, +1/-1). Times stay integral
until :func:`embed` turns a slice into float64 points in (x, y, scaled t).
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, NamedTuple

import numpy as np

from .errors import EventParseError, EventValidationError

US_PER_MS = 1_000
BINARY_MAGIC = b"EVT1"
_BINARY_HEADER = struct.Struct("<4sIIQ")
_BINARY_RECORD = np.dtype([("t", "<u8"), ("x", "<u2"), ("y", "<u2"), ("p", "i1")])


class Event(NamedTuple):
    t: int
    x: int
    y: int
    p: int


def _frozen(a: np.ndarray, dtype) -> np.ndarray:
    a = np.array(a, dtype=dtype, copy=True).reshape(-1)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class EventStream:
    """Time-ordered events from a ``width`` x ``height`` sensor."""

    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    p: np.ndarray
    width: int
    height: int
    duration: int = -1

    def __post_init__(self) -> None:
        object.__setattr__(self, "t", _frozen(self.t, np.int64))
        object.__setattr__(self, "x", _frozen(self.x, np.int32))
        object.__setattr__(self, "y", _frozen(self.y, np.int32))
        object.__setattr__(self, "p", _frozen(self.p, np.int8))
        n = len(self.t)
        if not (len(self.x) == len(self.y) == len(self.p) == n):
            raise EventValidationError("event columns have different lengths")
        if self.width <= 0 or self.height <= 0:
            raise EventValidationError(f"invalid geometry {self.width}x{self.height}")
        if n:
            if self.t[0] < 0:
                raise EventValidationError("negative timestamp")
            if np.any(np.diff(self.t) < 0):
                raise EventValidationError("timestamps are not non-decreasing")
            _check_bounds(self.x, self.y, self.width, self.height)
            if not np.all((self.p == 1) | (self.p == -1)):
                raise EventValidationError("polarity must be +1 or -1")
        t_max = int(self.t[-1]) if n else 0
        if self.duration < 0:
            object.__setattr__(self, "duration", t_max)
        elif self.duration < t_max:
            raise EventValidationError(
                f"duration {self.duration} is shorter than the last timestamp {t_max}"
            )

    @classmethod
    def from_unsorted(cls, t, x, y, p, width: int, height: int, duration: int = -1) -> EventStream:
        """Build a stream from events in arbitrary order (stable sort on t)."""
        order = np.argsort(np.asarray(t, dtype=np.int64), kind="stable")
        return cls(
            np.asarray(t)[order],
            np.asarray(x)[order],
            np.asarray(y)[order],
            np.asarray(p)[order],
            width,
            height,
            duration,
        )

    @classmethod
    def from_events(cls, events, width: int, height: int, duration: int = -1) -> EventStream:
        events = list(events)
        if not events:
            return cls.empty(width, height, max(duration, 0))
        t, x, y, p = zip(*events)
        return cls.from_unsorted(t, x, y, p, width, height, duration)

    @classmethod
    def empty(cls, width: int, height: int, duration: int = 0) -> EventStream:
        z = np.zeros(0)
        return cls(z, z, z, z, width, height, duration)

    def __len__(self) -> int:
        return len(self.t)

    def __iter__(self) -> Iterator[Event]:
        for row in zip(self.t.tolist(), self.x.tolist(), self.y.tolist(), self.p.tolist()):
            yield Event(*row)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, EventStream):
            return NotImplemented
        return (
            self.width == other.width
            and self.height == other.height
            and self.duration == other.duration
            and np.array_equal(self.t, other.t)
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.y, other.y)
            and np.array_equal(self.p, other.p)
        )

    __hash__ = None  # type: ignore[assignment]

    def select(self, mask_or_index) -> EventStream:
        """Subset of events (order preserved), same geometry and duration."""
        idx = np.asarray(mask_or_index)
        if idx.dtype == bool:
            idx = np.flatnonzero(idx)
        else:
            idx = np.sort(idx)
        return EventStream(
            self.t[idx], self.x[idx], self.y[idx], self.p[idx],
            self.width, self.height, self.duration,
        )

    def window(self, t_start: float, t_end: float) -> EventStream:
        lo, hi = np.searchsorted(self.t, [t_start, t_end], side="left")
        return self.select(np.arange(lo, hi))


def _check_bounds(x: np.ndarray, y: np.ndarray, width: int, height: int) -> None:
    bad = (x < 0) | (x >= width) | (y < 0) | (y >= height)
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise EventValidationError(
            f"event {i} at ({int(x[i])}, {int(y[i])}) outside {width}x{height} frame"
        )


@dataclass(frozen=True)
class EventSlice:
    """Events with ``t_start <= t < t_start + t_len``, plus sensor geometry."""

    stream: EventStream = field(repr=False)
    t_start: float
    t_len: float

    @property
    def width(self) -> int:
        return self.stream.width

    @property
    def height(self) -> int:
        return self.stream.height

    @property
    def t(self) -> np.ndarray:
        return self.stream.t

    @property
    def x(self) -> np.ndarray:
        return self.stream.x

    @property
    def y(self) -> np.ndarray:
        return self.stream.y

    @property
    def p(self) -> np.ndarray:
        return self.stream.p

    def __len__(self) -> int:
        return len(self.stream)

    def __iter__(self) -> Iterator[Event]:
        return iter(self.stream)


@dataclass(frozen=True)
class SlicingParams:
    t_l: int = 10 * US_PER_MS
    t_s: int = 1 * US_PER_MS
    temporal_scale: float = 1.0

    def __post_init__(self) -> None:
        if not 0 < self.t_s <= self.t_l:
            raise ValueError(f"need 0 < t_s <= t_l, got t_s={self.t_s}, t_l={self.t_l}")
        if not self.temporal_scale > 0:
            raise ValueError("temporal_scale must be positive")

    @property
    def overlap(self) -> int:
        return self.t_l - self.t_s


def slice_stream(stream: EventStream | EventSlice, t_start: float, t_len: float) -> EventSlice:
    """Half-open time window of a stream; empty when out of range.

    Bounds may be fractional microseconds.
    """
    if t_start < 0:
        raise ValueError("t_start must be >= 0")
    if t_len <= 0:
        raise ValueError("t_len must be > 0")
    if isinstance(stream, EventSlice):
        stream = stream.stream
    return EventSlice(stream.window(t_start, t_start + t_len), t_start, t_len)


def embed(sl: EventSlice, temporal_scale: float = 1.0) -> np.ndarray:
    """Map a slice to an (N, 3) array of (x, y, (t - t_start) * scale / 1000)."""
    if not temporal_scale > 0:
        raise ValueError("temporal_scale must be positive")
    pts = np.empty((len(sl), 3), dtype=np.float64)
    pts[:, 0] = sl.x
    pts[:, 1] = sl.y
    pts[:, 2] = (sl.t - sl.t_start) * (temporal_scale / US_PER_MS)
    return pts


# --------------------------------------------------------------------------
# file formats
# --------------------------------------------------------------------------

def _infer_format(path: Path, fmt: str | None) -> str:
    if fmt:
        fmt = fmt.lower()
    elif path.suffix.lower() in (".bin", ".evt", ".evt1"):
        fmt = "binary"
    else:
        fmt = "csv"
    if fmt not in ("csv", "binary"):
        raise ValueError(f"unknown event format {fmt!r}")
    return fmt


def load_events(path: str | os.PathLike, format: str | None = None) -> EventStream:
    """Read an event file. ``format`` is ``"csv"`` or ``"binary"``; inferred
    from the suffix when omitted."""
    path = Path(path)
    fmt = _infer_format(path, format)
    if fmt == "binary":
        return _load_binary(path)
    return _load_csv(path)


def store_events(stream: EventStream, path: str | os.PathLike, format: str | None = None) -> None:
    path = Path(path)
    fmt = _infer_format(path, format)
    try:
        if fmt == "binary":
            _store_binary(stream, path)
        else:
            _store_csv(stream, path)
    except OSError as exc:
        raise OSError(f"could not write events to {path}: {exc}") from exc


def _store_csv(stream: EventStream, path: Path) -> None:
    with open(path, "w", newline="\n", encoding="ascii") as fh:
        fh.write(f"# width={stream.width}\n# height={stream.height}\n")
        last = int(stream.t[-1]) if len(stream) else 0
        if stream.duration != last:
            fh.write(f"# duration={stream.duration}\n")
        fh.write("t_us,x,y,p\n")
        if len(stream):
            cols = np.column_stack([stream.t, stream.x, stream.y, stream.p])
            np.savetxt(fh, cols, fmt="%d", delimiter=",")


def _parse_header_value(line: str, key: str, lineno: int) -> int:
    body = line.lstrip("#").strip()
    name, sep, value = body.partition("=")
    if not sep or name.strip() != key:
        raise EventParseError(f"line {lineno}: expected '# {key}=<int>', got {line!r}")
    try:
        return int(value.strip())
    except ValueError:
        raise EventParseError(f"line {lineno}: bad {key} value {value.strip()!r}") from None


def _load_csv(path: Path) -> EventStream:
    with open(path, "r", encoding="ascii") as fh:
        lines = fh.read().splitlines()
    if len(lines) < 3:
        raise EventParseError(f"{path}: truncated header")
    width = _parse_header_value(lines[0], "width", 1)
    height = _parse_header_value(lines[1], "height", 2)
    head = 2
    duration = -1
    # optional, written when the recording outlasts its last event
    if lines[2].startswith("#"):
        duration = _parse_header_value(lines[2], "duration", 3)
        head = 3
    if len(lines) <= head or [c.strip() for c in lines[head].split(",")] != ["t_us", "x", "y", "p"]:
        got = lines[head] if len(lines) > head else ""
        raise EventParseError(f"line {head + 1}: expected column header 't_us,x,y,p', got {got!r}")
    head += 1
    body = [ln for ln in lines[head:] if ln.strip()]
    data = _parse_rows_fast(body)
    if data is None:
        data = _parse_rows_checked(lines, head)
    _check_bounds(data[:, 1], data[:, 2], width, height)
    return EventStream.from_unsorted(
        data[:, 0], data[:, 1], data[:, 2], data[:, 3], width, height, duration
    )


def _parse_rows_fast(body: list[str]) -> np.ndarray | None:
    """Vectorised parse of well-formed rows; None if anything looks off."""
    if not body:
        return np.empty((0, 4), dtype=np.int64)
    try:
        data = np.loadtxt(body, delimiter=",", dtype=np.int64, ndmin=2)
    except ValueError:
        return None
    if data.shape[1] != 4 or np.any(data[:, 0] < 0) or not np.all(np.abs(data[:, 3]) == 1):
        return None
    return data


def _parse_rows_checked(lines: list[str], head: int) -> np.ndarray:
    rows = []
    for lineno, line in enumerate(lines[head:], start=head + 1):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 4:
            raise EventParseError(f"line {lineno}: expected 4 fields, got {len(parts)}")
        try:
            row = [int(v) for v in parts]
        except ValueError:
            raise EventParseError(f"line {lineno}: non-integer field in {line!r}") from None
        if row[3] not in (1, -1):
            raise EventParseError(f"line {lineno}: polarity must be 1 or -1")
        if row[0] < 0:
            raise EventParseError(f"line {lineno}: negative timestamp")
        rows.append(row)
    return np.array(rows, dtype=np.int64).reshape(-1, 4)


def _store_binary(stream: EventStream, path: Path) -> None:
    rec = np.empty(len(stream), dtype=_BINARY_RECORD)
    rec["t"], rec["x"], rec["y"], rec["p"] = stream.t, stream.x, stream.y, stream.p
    with open(path, "wb") as fh:
        fh.write(_BINARY_HEADER.pack(BINARY_MAGIC, stream.width, stream.height, len(stream)))
        fh.write(rec.tobytes())


def _load_binary(path: Path) -> EventStream:
    raw = path.read_bytes()
    if len(raw) < _BINARY_HEADER.size:
        raise EventParseError(f"{path}: truncated binary header")
    magic, width, height, count = _BINARY_HEADER.unpack_from(raw)
    if magic != BINARY_MAGIC:
        raise EventParseError(f"{path}: bad magic {magic!r}")
    body = raw[_BINARY_HEADER.size:]
    if len(body) != count * _BINARY_RECORD.itemsize:
        raise EventParseError(
            f"{path}: expected {count} records, found {len(body) / _BINARY_RECORD.itemsize:g}"
        )
    rec = np.frombuffer(body, dtype=_BINARY_RECORD)
    if count and not np.all((rec["p"] == 1) | (rec["p"] == -1)):
        raise EventParseError(f"{path}: polarity must be 1 or -1")
    _check_bounds(rec["x"].astype(np.int64), rec["y"].astype(np.int64), width, height)
    return EventStream.from_unsorted(
        rec["t"].astype(np.int64), rec["x"], rec["y"], rec["p"], width, height
    )
