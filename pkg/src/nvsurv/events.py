"""Event stream data model, ground-truth tracks, and their file formats.

Events live in a packed numpy structured array (``EVENT_DTYPE``) whose byte
layout is exactly the per-record layout of the binary ``EVS1`` format, so
binary I/O is a single ``tobytes``/``frombuffer``.

CSV format::

    t_us,x,y,p
    1000,5,7,1

Binary format (little-endian)::

    b"EVS1" | u16 width | u16 height | u64 count | count * (u64 t, u16 x, u16 y, u8 p)
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field
from typing import BinaryIO, Iterator, NamedTuple

import numpy as np

from .boxes import BoundingBox, round_half_up

SENSOR_WIDTH = 240
SENSOR_HEIGHT = 180

CLASSES = ("car", "bus", "truck_van", "bike")
CLASS_INDEX = {name: i for i, name in enumerate(CLASSES)}

# mean object sizes (w, h) in pixels per class
CLASS_SIZES = {
    "car": (44, 19),
    "bus": (101, 41),
    "truck_van": (50, 25),
    "bike": (21, 16),
}

OFF, ON = 0, 1

EVENT_DTYPE = np.dtype([("t", "<u8"), ("x", "<u2"), ("y", "<u2"), ("p", "u1")])
BINARY_MAGIC = b"EVS1"
_BINARY_HEADER = struct.Struct("<4sHHQ")
CSV_HEADER = "t_us,x,y,p"


class EventFormatError(ValueError):
    """Malformed event or annotation file."""


class EventValidationError(ValueError):
    """Well-formed record that violates sensor bounds or polarity domain."""


class Event(NamedTuple):
    x: int
    y: int
    t: int
    p: int


@dataclass(frozen=True, eq=False)
class EventStream:
    """Time-sorted events from one ``width`` x ``height`` sensor."""

    events: np.ndarray = field(default_factory=lambda: np.zeros(0, EVENT_DTYPE))
    width: int = SENSOR_WIDTH
    height: int = SENSOR_HEIGHT

    def __post_init__(self):
        ev = np.asarray(self.events)
        if ev.dtype != EVENT_DTYPE:
            raise TypeError(f"events must have dtype {EVENT_DTYPE}, got {ev.dtype}")
        ev.setflags(write=False)
        object.__setattr__(self, "events", ev)
        if len(ev):
            if np.any(np.diff(ev["t"].astype(np.int64)) < 0):
                raise EventValidationError("events are not sorted by timestamp")
            _check_bounds(ev, self.width, self.height)

    @classmethod
    def from_arrays(cls, t, x, y, p, width=SENSOR_WIDTH, height=SENSOR_HEIGHT, sort=True):
        t = np.asarray(t)
        ev = np.zeros(len(t), EVENT_DTYPE)
        ev["t"], ev["x"], ev["y"], ev["p"] = t, x, y, p
        if sort:
            ev = ev[np.argsort(ev["t"], kind="stable")]
        return cls(ev, width, height)

    @classmethod
    def from_events(cls, events, width=SENSOR_WIDTH, height=SENSOR_HEIGHT, sort=True):
        events = list(events)
        cols = np.array([(e.t, e.x, e.y, e.p) for e in events], dtype=np.int64).reshape(-1, 4)
        _check_values(cols[:, 1], cols[:, 2], cols[:, 3], width, height)
        return cls.from_arrays(cols[:, 0], cols[:, 1], cols[:, 2], cols[:, 3], width, height, sort)

    def __len__(self) -> int:
        return len(self.events)

    def __iter__(self) -> Iterator[Event]:
        for t, x, y, p in self.events.tolist():
            yield Event(x, y, t, p)

    def __getitem__(self, i) -> Event:
        t, x, y, p = self.events[i].tolist()
        return Event(x, y, t, p)

    def __eq__(self, other) -> bool:
        if not isinstance(other, EventStream):
            return NotImplemented
        return (
            self.width == other.width
            and self.height == other.height
            and np.array_equal(self.events, other.events)
        )

    __hash__ = None

    @property
    def duration(self) -> int:
        return int(self.events["t"][-1]) + 1 if len(self) else 0


def _check_values(x, y, p, width, height):
    x, y, p = np.asarray(x), np.asarray(y), np.asarray(p)
    bad = np.flatnonzero((x < 0) | (x >= width) | (y < 0) | (y >= height) | ((p != 0) & (p != 1)))
    if len(bad):
        i = int(bad[0])
        raise EventValidationError(
            f"event {i}: (x={int(x[i])}, y={int(y[i])}, p={int(p[i])}) outside "
            f"{width}x{height} sensor or polarity not in {{0,1}}"
        )


def _check_bounds(ev, width, height):
    _check_values(ev["x"], ev["y"], ev["p"], width, height)


def _read_all(source) -> bytes:
    if isinstance(source, (bytes, bytearray, memoryview)):
        return bytes(source)
    return source.read()


def parse_events(source, format: str = "binary", width: int = SENSOR_WIDTH,
                 height: int = SENSOR_HEIGHT) -> EventStream:
    """Decode an event file.

    ``source`` is bytes or a binary file object. For CSV the sensor geometry
    comes from ``width``/``height``; binary files carry their own. The result
    is stably sorted by timestamp.
    """
    data = _read_all(source)
    if format == "csv":
        return _parse_csv(data, width, height)
    if format == "binary":
        return _parse_binary(data)
    raise ValueError(f"unknown event format {format!r}")


def _parse_csv(data: bytes, width: int, height: int) -> EventStream:
    lines = data.decode("ascii").splitlines()
    if not lines:
        return EventStream(width=width, height=height)
    if lines[0].strip() != CSV_HEADER:
        raise EventFormatError(f"line 1: expected header {CSV_HEADER!r}, got {lines[0]!r}")
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 4:
            raise EventFormatError(f"line {lineno}: expected 4 fields, got {len(parts)}")
        try:
            t, x, y, p = (int(v) for v in parts)
        except ValueError:
            raise EventFormatError(f"line {lineno}: non-integer field in {line!r}") from None
        if t < 0:
            raise EventFormatError(f"line {lineno}: negative timestamp {t}")
        if not (0 <= x < width and 0 <= y < height and p in (0, 1)):
            raise EventValidationError(
                f"line {lineno}: (x={x}, y={y}, p={p}) outside {width}x{height} sensor "
                "or polarity not in {0,1}"
            )
        rows.append((t, x, y, p))
    cols = np.array(rows, dtype=np.int64).reshape(-1, 4)
    return EventStream.from_arrays(cols[:, 0], cols[:, 1], cols[:, 2], cols[:, 3], width, height)


def _parse_binary(data: bytes) -> EventStream:
    if len(data) < _BINARY_HEADER.size:
        raise EventFormatError(f"offset 0: truncated header ({len(data)} bytes)")
    magic, width, height, count = _BINARY_HEADER.unpack_from(data, 0)
    if magic != BINARY_MAGIC:
        raise EventFormatError(f"offset 0: bad magic {magic!r}")
    expected = _BINARY_HEADER.size + count * EVENT_DTYPE.itemsize
    if len(data) != expected:
        raise EventFormatError(
            f"offset {min(len(data), expected)}: expected {expected} bytes for {count} events, "
            f"got {len(data)}"
        )
    ev = np.frombuffer(data, EVENT_DTYPE, count=count, offset=_BINARY_HEADER.size).copy()
    _check_bounds(ev, width, height)
    ev = ev[np.argsort(ev["t"], kind="stable")]
    return EventStream(ev, width, height)


def write_events(stream: EventStream, format: str = "binary", dest: BinaryIO | None = None) -> bytes:
    """Encode ``stream``; also writes to ``dest`` when given. Returns the bytes."""
    if format == "csv":
        buf = io.StringIO()
        buf.write(CSV_HEADER + "\n")
        ev = stream.events
        if len(ev):
            cols = np.column_stack([ev["t"], ev["x"], ev["y"], ev["p"]]).astype(np.int64)
            np.savetxt(buf, cols, fmt="%d", delimiter=",")
        out = buf.getvalue().encode("ascii")
    elif format == "binary":
        header = _BINARY_HEADER.pack(BINARY_MAGIC, stream.width, stream.height, len(stream))
        out = header + stream.events.tobytes()
    else:
        raise ValueError(f"unknown event format {format!r}")
    if dest is not None:
        dest.write(out)
    return out


@dataclass(frozen=True)
class TrackAnnotation:
    """Ground-truth track: one object's box over time."""

    track_id: int
    class_label: str
    keyframes: tuple[tuple[int, BoundingBox], ...]

    def __post_init__(self):
        if self.class_label not in CLASS_INDEX:
            raise ValueError(f"unknown class {self.class_label!r}; expected one of {CLASSES}")
        if not self.keyframes:
            raise ValueError(f"track {self.track_id} has no keyframes")
        times = [t for t, _ in self.keyframes]
        if any(b < a for a, b in zip(times, times[1:])):
            raise ValueError(f"track {self.track_id} keyframes not sorted by time")

    @property
    def class_index(self) -> int:
        return CLASS_INDEX[self.class_label]

    @property
    def t_first(self) -> int:
        return self.keyframes[0][0]

    @property
    def t_last(self) -> int:
        return self.keyframes[-1][0]

    def box_at(self, t: float) -> BoundingBox | None:
        """Linearly interpolated box at time ``t``; None outside the track's lifetime."""
        kf = self.keyframes
        if t < kf[0][0] or t > kf[-1][0]:
            return None
        lo, hi = 0, len(kf) - 1
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if kf[mid][0] <= t:
                lo = mid
            else:
                hi = mid
        (ta, a), (tb, b) = kf[lo], kf[hi]
        if t == ta or tb == ta:
            return a
        if t == tb:
            return b
        f = (t - ta) / (tb - ta)
        vals = [round_half_up(va + f * (vb - va)) for va, vb in
                zip((a.x0, a.y0, a.w, a.h), (b.x0, b.y0, b.w, b.h))]
        return BoundingBox(vals[0], vals[1], max(vals[2], 1), max(vals[3], 1))


def annotations_to_json(tracks) -> str:
    doc = [
        {
            "track_id": tr.track_id,
            "class": tr.class_label,
            "keyframes": [
                {"t_us": t, "x": b.x0, "y": b.y0, "w": b.w, "h": b.h} for t, b in tr.keyframes
            ],
        }
        for tr in tracks
    ]
    return json.dumps(doc, separators=(",", ":"))


def annotations_from_json(text) -> list[TrackAnnotation]:
    try:
        doc = json.loads(text)
        return [
            TrackAnnotation(
                int(d["track_id"]),
                d["class"],
                tuple((int(k["t_us"]), BoundingBox(int(k["x"]), int(k["y"]), int(k["w"]), int(k["h"])))
                      for k in d["keyframes"]),
            )
            for d in doc
        ]
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise EventFormatError(f"bad annotation file: {exc}") from exc
