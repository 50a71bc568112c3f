"""Fixed-interval event accumulation and the three frame representations.

Frame data is a ``(height, width, channels)`` uint8 array indexed
``data[y, x, c]``. For two-channel frames channel 0 holds OFF events and
channel 1 holds ON events.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .events import SENSOR_HEIGHT, SENSOR_WIDTH, EventStream


class Representation(str, enum.Enum):
    MULTI_BIT_2CH = "mb2c"
    ONE_BIT_2CH = "1b2c"
    ONE_BIT_1CH = "1b1c"

    @property
    def channels(self) -> int:
        return 1 if self is Representation.ONE_BIT_1CH else 2


@dataclass(frozen=True)
class FrameConfig:
    t_frame: int = 66_000  # microseconds
    clip_max: int = 15
    width: int = SENSOR_WIDTH
    height: int = SENSOR_HEIGHT

    def __post_init__(self):
        if self.t_frame <= 0:
            raise ValueError(f"t_frame must be > 0, got {self.t_frame}")
        if not 1 <= self.clip_max <= 255:
            raise ValueError(f"clip_max must be in [1, 255], got {self.clip_max}")


@dataclass(frozen=True, eq=False)
class Frame:
    index: int
    t_start: int
    data: np.ndarray
    representation: Representation

    def __post_init__(self):
        channels = self.data.shape[2] if self.data.ndim == 3 else None
        if channels != self.representation.channels:
            raise ValueError(
                f"{self.representation.name} frame needs {self.representation.channels} "
                f"channel(s), data has shape {self.data.shape}"
            )
        if self.representation is not Representation.MULTI_BIT_2CH and self.data.max(initial=0) > 1:
            raise ValueError(f"{self.representation.name} frame holds non-binary values")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    def __eq__(self, other):
        if not isinstance(other, Frame):
            return NotImplemented
        return (self.index, self.t_start, self.representation) == (
            other.index, other.t_start, other.representation
        ) and np.array_equal(self.data, other.data)

    __hash__ = None


def accumulate(stream: EventStream, config: FrameConfig = FrameConfig(),
               n_frames: int | None = None) -> list[Frame]:
    """Bin events into half-open windows ``[k*t_frame, (k+1)*t_frame)``.

    Every pixel/polarity cell counts its events, clipped at ``clip_max``.
    Frames are contiguous from k=0 through the last event's frame (or
    ``n_frames`` when given); empty windows become all-zero frames.
    """
    if (stream.width, stream.height) != (config.width, config.height):
        raise ValueError(
            f"stream is {stream.width}x{stream.height}, config expects {config.width}x{config.height}"
        )
    ev = stream.events
    k = (ev["t"] // config.t_frame).astype(np.int64)
    if n_frames is None:
        n_frames = int(k[-1]) + 1 if len(ev) else 0
    keep = k < n_frames
    k = k[keep]
    cells = (config.height * config.width * 2)
    flat = k * cells + (ev["y"][keep].astype(np.int64) * config.width + ev["x"][keep]) * 2 + ev["p"][keep]
    counts = np.bincount(flat, minlength=n_frames * cells)
    counts = np.minimum(counts, config.clip_max).astype(np.uint8)
    counts = counts.reshape(n_frames, config.height, config.width, 2)
    return [
        Frame(i, i * config.t_frame, counts[i], Representation.MULTI_BIT_2CH)
        for i in range(n_frames)
    ]


def _require(frame: Frame, rep: Representation, op: str):
    if frame.representation is not rep:
        raise TypeError(f"{op} needs a {rep.name} frame, got {frame.representation.name}")


def to_one_bit(frame: Frame) -> Frame:
    _require(frame, Representation.MULTI_BIT_2CH, "to_one_bit")
    return Frame(frame.index, frame.t_start, (frame.data >= 1).astype(np.uint8),
                 Representation.ONE_BIT_2CH)


def to_single_channel(frame: Frame) -> Frame:
    _require(frame, Representation.ONE_BIT_2CH, "to_single_channel")
    merged = np.logical_or(frame.data[..., 0], frame.data[..., 1])
    return Frame(frame.index, frame.t_start, merged[..., None].astype(np.uint8),
                 Representation.ONE_BIT_1CH)


def convert(frame: Frame, rep: Representation) -> Frame:
    """Derive ``rep`` from a multi-bit frame."""
    if rep is Representation.MULTI_BIT_2CH:
        _require(frame, Representation.MULTI_BIT_2CH, "convert")
        return frame
    one_bit = to_one_bit(frame)
    return one_bit if rep is Representation.ONE_BIT_2CH else to_single_channel(one_bit)


def what_where_split(frame: Frame) -> tuple[Frame, Frame]:
    """Return ``(where, what)``: a binary detection map and the untouched multi-bit frame."""
    return to_single_channel(to_one_bit(frame)), frame


_NEIGHBOURS = np.array([[1, 1, 1], [1, 0, 1], [1, 1, 1]])


def suppress_isolated(frame: Frame, min_neighbors: int = 1) -> Frame:
    """Clear set pixels that have fewer than ``min_neighbors`` set 8-neighbours."""
    _require(frame, Representation.ONE_BIT_1CH, "suppress_isolated")
    if not 0 <= min_neighbors <= 8:
        raise ValueError(f"min_neighbors must be in [0, 8], got {min_neighbors}")
    img = frame.data[..., 0]
    if min_neighbors == 0:
        return frame
    n = ndimage.convolve(img.astype(np.int16), _NEIGHBOURS, mode="constant", cval=0)
    kept = (img > 0) & (n >= min_neighbors)
    return Frame(frame.index, frame.t_start, kept[..., None].astype(np.uint8),
                 Representation.ONE_BIT_1CH)


def dump_frame(frame: Frame) -> str:
    """Text dump: one JSON header line, then one CSV line per image row.

    Each row line lists ``width * channels`` counts ordered by x, then channel.
    """
    h, w, c = frame.data.shape
    header = json.dumps({"k": frame.index, "t_start": frame.t_start, "w": w, "h": h, "c": c,
                         "repr": frame.representation.value})
    rows = [",".join(map(str, row)) for row in frame.data.reshape(h, w * c).tolist()]
    return "\n".join([header, *rows]) + "\n"


def load_frame(text: str) -> Frame:
    lines = text.splitlines()
    head = json.loads(lines[0])
    h, w, c = head["h"], head["w"], head["c"]
    if len(lines) - 1 != h:
        raise ValueError(f"frame dump has {len(lines) - 1} rows, header says {h}")
    data = np.array([[int(v) for v in line.split(",")] for line in lines[1:]], dtype=np.uint8)
    return Frame(head["k"], head["t_start"], data.reshape(h, w, c), Representation(head["repr"]))
