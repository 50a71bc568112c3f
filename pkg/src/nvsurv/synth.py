"""Synthetic road scenes: rectangles crossing a DVS sensor, with exact ground truth.

Each moving rectangle fires on its perimeter, ON events on the half that
faces the direction of motion and OFF events on the trailing half, as
independent Poisson processes per boundary pixel. A uniform background
noise process with random polarity is superimposed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .boxes import BoundingBox, round_half_up
from .events import (
    CLASS_INDEX,
    CLASS_SIZES,
    CLASSES,
    OFF,
    ON,
    SENSOR_HEIGHT,
    SENSOR_WIDTH,
    EventStream,
    TrackAnnotation,
)


@dataclass(frozen=True)
class ObjectSpec:
    """One object crossing the scene horizontally.

    ``velocity`` is in pixels/second; positive moves right. When ``start_x``
    is None the object starts just outside the sensor on the side it enters
    from (or centred, for a static object).
    """

    class_label: str
    width: int
    height: int
    velocity: float
    entry_time: int
    entry_row: int
    start_x: float | None = None

    def __post_init__(self):
        if self.class_label not in CLASS_INDEX:
            raise ValueError(f"class_label: unknown class {self.class_label!r}; expected one of {CLASSES}")
        if self.width < 1 or self.height < 1:
            raise ValueError(f"object size must be >= 1x1, got {self.width}x{self.height}")
        if self.entry_time < 0:
            raise ValueError("entry_time must be >= 0")


@dataclass(frozen=True)
class SceneConfig:
    duration: int  # microseconds
    objects: tuple[ObjectSpec, ...] = ()
    edge_event_rate: float = 100.0
    noise_rate: float = 0.0
    rng_seed: int = 0
    width: int = SENSOR_WIDTH
    height: int = SENSOR_HEIGHT
    tick: int = 1000  # emission and keyframe period, microseconds
    track_id_start: int = 0
    edge_thickness: int = 2  # emitting ring width, pixels

    def __post_init__(self):
        if self.duration <= 0:
            raise ValueError(f"scene duration must be > 0, got {self.duration}")
        if self.edge_event_rate < 0 or self.noise_rate < 0:
            raise ValueError("event rates must be >= 0")
        if self.tick <= 0:
            raise ValueError("tick must be > 0")
        if self.edge_thickness < 1:
            raise ValueError("edge_thickness must be >= 1")
        if self.rng_seed < 0:
            raise ValueError("rng_seed must be unsigned")
        object.__setattr__(self, "objects", tuple(self.objects))


def _x_start(obj: ObjectSpec, width: int) -> float:
    if obj.start_x is not None:
        return obj.start_x
    if obj.velocity > 0:
        return float(-obj.width)
    if obj.velocity < 0:
        return float(width)
    return (width - obj.width) / 2.0


def _perimeter_offsets(w: int, h: int, thickness: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """(dx, dy) offsets of the ``thickness``-pixel ring of a w x h box, each pixel once."""
    mask = np.zeros((h, w), bool)
    mask[:thickness, :] = mask[h - thickness:, :] = True
    mask[:, :thickness] = mask[:, w - thickness:] = True
    dy, dx = np.nonzero(mask)
    return dx, dy


def object_track(obj: ObjectSpec, cfg: SceneConfig, track_id: int) -> TrackAnnotation | None:
    """Keyframes every ``cfg.tick`` while the (clipped) box overlaps the sensor,
    plus one closing keyframe at the end of the last tick."""
    x_start = _x_start(obj, cfg.width)
    keyframes = []
    for t in range(obj.entry_time - obj.entry_time % cfg.tick, cfg.duration, cfg.tick):
        if t < obj.entry_time:
            continue
        x0 = round_half_up(x_start + obj.velocity * (t - obj.entry_time) / 1e6)
        box = BoundingBox(x0, obj.entry_row, obj.width, obj.height).clamp(cfg.width, cfg.height)
        if box is None:
            if keyframes:
                break
            continue
        keyframes.append((t, box))
    if not keyframes:
        return None
    # events carry sub-tick timestamps, so the box holds through the last tick
    t_last, box_last = keyframes[-1]
    keyframes.append((t_last + cfg.tick - 1, box_last))
    return TrackAnnotation(track_id, obj.class_label, tuple(keyframes))


def _object_events(obj: ObjectSpec, cfg: SceneConfig, rng: np.random.Generator):
    if obj.velocity == 0 or cfg.edge_event_rate == 0:
        return None
    first_tick = -(-obj.entry_time // cfg.tick) * cfg.tick
    ticks = np.arange(first_tick, cfg.duration, cfg.tick, dtype=np.int64)
    if len(ticks) == 0:
        return None
    x_start = _x_start(obj, cfg.width)
    x0 = np.floor(x_start + obj.velocity * (ticks - obj.entry_time) / 1e6 + 0.5).astype(np.int64)
    visible = (x0 + obj.width > 0) & (x0 < cfg.width)
    ticks, x0 = ticks[visible], x0[visible]
    if len(ticks) == 0:
        return None
    dx, dy = _perimeter_offsets(obj.width, obj.height, cfg.edge_thickness)
    leading = dx >= obj.width / 2.0 if obj.velocity > 0 else dx < obj.width / 2.0
    lam = cfg.edge_event_rate * cfg.tick / 1e6
    counts = rng.poisson(lam, size=(len(ticks), len(dx)))
    xs = x0[:, None] + dx[None, :]
    ys = np.broadcast_to(obj.entry_row + dy[None, :], xs.shape)
    inside = (xs >= 0) & (xs < cfg.width) & (ys >= 0) & (ys < cfg.height)
    counts = np.where(inside, counts, 0).ravel()
    n = int(counts.sum())
    if n == 0:
        return None
    t = np.repeat(np.broadcast_to(ticks[:, None], xs.shape).ravel(), counts)
    t = t + rng.integers(0, cfg.tick, size=n)
    x = np.repeat(xs.ravel(), counts)
    y = np.repeat(ys.ravel(), counts)
    p = np.repeat(np.broadcast_to(np.where(leading, ON, OFF)[None, :], xs.shape).ravel(), counts)
    return t, x, y, p


def synthesize_scene(cfg: SceneConfig) -> tuple[EventStream, list[TrackAnnotation]]:
    """Render ``cfg`` into a sorted event stream plus one annotation per visible object."""
    rng = np.random.default_rng(cfg.rng_seed)
    parts = []
    tracks = []
    for i, obj in enumerate(cfg.objects):
        track = object_track(obj, cfg, cfg.track_id_start + i)
        if track is not None:
            tracks.append(track)
        ev = _object_events(obj, cfg, rng)
        if ev is not None:
            parts.append(ev)

    if cfg.noise_rate > 0:
        n = int(rng.poisson(cfg.noise_rate * cfg.width * cfg.height * cfg.duration / 1e6))
        parts.append((
            rng.integers(0, cfg.duration, size=n),
            rng.integers(0, cfg.width, size=n),
            rng.integers(0, cfg.height, size=n),
            rng.integers(0, 2, size=n),
        ))

    if parts:
        t, x, y, p = (np.concatenate([part[i] for part in parts]) for i in range(4))
    else:
        t = x = y = p = np.zeros(0, np.int64)
    stream = EventStream.from_arrays(t, x, y, p, cfg.width, cfg.height)
    return stream, tracks


@dataclass(frozen=True)
class ScenePlan:
    """Recipe for a randomized multi-lane scene, see :func:`plan_scene`."""

    tracks_per_class: dict = field(default_factory=lambda: {c: 3 for c in CLASSES})
    lanes: int = 3
    speed_range: tuple[float, float] = (70.0, 130.0)
    gap_range: tuple[float, float] = (30.0, 90.0)  # pixels between followers in one lane
    size_jitter: int = 0
    edge_event_rate: float = 100.0
    noise_rate: float = 0.0
    edge_thickness: int = 2
    width: int = SENSOR_WIDTH
    height: int = SENSOR_HEIGHT

    def __post_init__(self):
        for name, n in self.tracks_per_class.items():
            if name not in CLASS_INDEX:
                raise ValueError(f"tracks_per_class: unknown class {name!r}; expected one of {CLASSES}")
            if n < 0:
                raise ValueError(f"tracks_per_class: negative count for {name!r}")
        if self.lanes < 1:
            raise ValueError("lanes must be >= 1")


def plan_scene(plan: ScenePlan, seed: int, track_id_start: int = 0) -> SceneConfig:
    """Build a SceneConfig with objects queued in horizontal lanes.

    Lanes split the sensor height evenly; each lane has one constant speed and
    direction so followers never overtake, and consecutive objects keep a gap
    of at least ``gap_range[0]`` pixels.
    """
    rng = np.random.default_rng(seed)
    labels = [c for c in CLASSES for _ in range(plan.tracks_per_class.get(c, 0))]
    labels = [labels[i] for i in rng.permutation(len(labels))]
    lane_h = plan.height // plan.lanes
    speeds = rng.uniform(*plan.speed_range, size=plan.lanes)
    directions = np.where(np.arange(plan.lanes) % 2 == 0, 1.0, -1.0)
    lane_clock = rng.uniform(0, 0.5e6, size=plan.lanes)  # next free entry time, us
    objects = []
    for k, label in enumerate(labels):
        lane = k % plan.lanes
        w, h = CLASS_SIZES[label]
        if plan.size_jitter:
            w += int(rng.integers(-plan.size_jitter, plan.size_jitter + 1))
            h += int(rng.integers(-plan.size_jitter, plan.size_jitter + 1))
        h = min(h, lane_h)
        row = lane * lane_h + int(rng.integers(0, lane_h - h + 1))
        v = speeds[lane] * directions[lane]
        entry = int(lane_clock[lane])
        gap = rng.uniform(*plan.gap_range)
        lane_clock[lane] = entry + (w + gap) / abs(v) * 1e6
        objects.append(ObjectSpec(label, w, h, float(v), entry, row))
    # last object must fully cross
    end = max((o.entry_time + (plan.width + o.width) / abs(o.velocity) * 1e6 for o in objects),
              default=1e6)
    return SceneConfig(
        duration=int(end) + 1,
        objects=tuple(objects),
        edge_event_rate=plan.edge_event_rate,
        noise_rate=plan.noise_rate,
        rng_seed=seed,
        edge_thickness=plan.edge_thickness,
        width=plan.width,
        height=plan.height,
        track_id_start=track_id_start,
    )
