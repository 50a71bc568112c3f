"""Classifier datasets: GT/proposal matching, 42x42 patches, enrichment and splits."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .boxes import BoundingBox, iou, round_half_up
from .events import CLASS_INDEX, CLASSES, EventStream, TrackAnnotation
from .frames import Frame, FrameConfig, Representation, accumulate, convert, what_where_split
from .proposals import Proposal, ProposalSource, ccl_rp, hist_rp

PATCH = 42
DATASET_FORMAT = "nvsurv-dataset/1"
ENRICHED_CLASSES = ("bus", "truck_van")


@dataclass(frozen=True, eq=False)
class Sample:
    patch: np.ndarray  # (42, 42, C) uint8
    class_label: int
    track_id: int
    frame_index: int
    origin: ProposalSource

    def __post_init__(self):
        if self.patch.shape[:2] != (PATCH, PATCH) or self.patch.ndim != 3:
            raise ValueError(f"patch must be {PATCH}x{PATCH}xC, got {self.patch.shape}")


@dataclass
class DatasetSplit:
    train: list[Sample] = field(default_factory=list)
    val: list[Sample] = field(default_factory=list)
    test: list[Sample] = field(default_factory=list)

    def check_leakage(self):
        shared = {s.track_id for s in self.train} & {s.track_id for s in self.val}
        if shared:
            raise ValueError(f"tracks in both train and val: {sorted(shared)[:5]}")


@dataclass(frozen=True)
class ProposalConfig:
    """Knobs for both proposal methods; ``denoise`` is a neighbour count or 0 for off."""

    min_area: int = 2
    patch: tuple[int, int] = (6, 3)
    connectivity: int = 8
    denoise: int = 3
    refine: bool = True
    hist_threshold: int = 2
    hist_min_run: int = 3


@dataclass(frozen=True)
class DatasetConfig:
    iou_min: float = 0.1
    val_fraction: float = 0.2
    max_angle: float = 15.0
    max_shift: int = 4
    mask_outside_box: bool = False
    seed: int = 0


def interpolate_box(track: TrackAnnotation, t: float) -> BoundingBox | None:
    return track.box_at(t)


def frame_mid_time(k: int, t_frame: int) -> float:
    return (k + 0.5) * t_frame


def match_proposals(proposals, tracks, t_frame: int, iou_min: float = 0.1):
    """Pair each proposal with the live GT box of highest IoU at its frame's mid-time.

    Returns ``(proposal, track_id, class_label)`` for proposals whose best
    IoU exceeds ``iou_min``; ties go to the lower track id.
    """
    out = []
    ordered = sorted(tracks, key=lambda tr: tr.track_id)
    live_cache: dict[int, list] = {}
    for prop in proposals:
        live = live_cache.get(prop.frame_index)
        if live is None:
            t = frame_mid_time(prop.frame_index, t_frame)
            live = [(tr, tr.box_at(t)) for tr in ordered]
            live = live_cache[prop.frame_index] = [(tr, b) for tr, b in live if b is not None]
        best, best_iou = None, 0.0
        for tr, box in live:
            v = iou(prop.box, box)
            if v > best_iou:
                best, best_iou = tr, v
        if best is not None and best_iou > iou_min:
            out.append((prop, best.track_id, best.class_label))
    return out


def extract_patch(frame: Frame | np.ndarray, box: BoundingBox, size: int = PATCH,
                  mask_outside_box: bool = False) -> np.ndarray:
    """``size`` x ``size`` window centred on the box centroid, zero outside the frame."""
    data = frame.data if isinstance(frame, Frame) else frame
    h, w, c = data.shape
    cx, cy = box.centroid
    x0 = round_half_up(cx) - size // 2
    y0 = round_half_up(cy) - size // 2
    out = np.zeros((size, size, c), data.dtype)
    sx0, sy0 = max(x0, 0), max(y0, 0)
    sx1, sy1 = min(x0 + size, w), min(y0 + size, h)
    if sx1 > sx0 and sy1 > sy0:
        out[sy0 - y0:sy1 - y0, sx0 - x0:sx1 - x0] = data[sy0:sy1, sx0:sx1]
    if mask_outside_box:
        ys = np.arange(y0, y0 + size)[:, None]
        xs = np.arange(x0, x0 + size)[None, :]
        inside = (xs >= box.x0) & (xs < box.x1) & (ys >= box.y0) & (ys < box.y1)
        out[~inside] = 0
    return out


def corner_patches(box: BoundingBox, width: int = 240, height: int = 180,
                   size: int = PATCH) -> list[BoundingBox]:
    """Four ``size``-square boxes anchored at the corners of ``box``.

    Order is top-left, top-right, bottom-left, bottom-right. A box narrower
    (shorter) than ``size`` collapses the horizontal (vertical) variation.
    """
    xl, yt = box.x0, box.y0
    xr = max(box.x0, box.x1 - size)
    yb = max(box.y0, box.y1 - size)
    out = []
    for y in (yt, yb):
        for x in (xl, xr):
            x = min(max(x, 0), width - size)
            y = min(max(y, 0), height - size)
            out.append(BoundingBox(x, y, size, size))
    return out


def rotate_translate(patch: np.ndarray, angle_deg: float, dx: int, dy: int) -> np.ndarray:
    """Nearest-neighbour rotation about the patch centre, then an integer shift."""
    h, w = patch.shape[:2]
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    th = math.radians(angle_deg)
    cos, sin = math.cos(th), math.sin(th)
    yy, xx = np.mgrid[0:h, 0:w]
    # inverse map: output pixel -> source pixel
    ox, oy = xx - dx - cx, yy - dy - cy
    sx = np.floor(cos * ox + sin * oy + cx + 0.5).astype(np.int64)
    sy = np.floor(-sin * ox + cos * oy + cy + 0.5).astype(np.int64)
    valid = (sx >= 0) & (sx < w) & (sy >= 0) & (sy < h)
    out = np.zeros_like(patch)
    out[valid] = patch[sy[valid], sx[valid]]
    return out


def augment_patch(patch: np.ndarray, rng: np.random.Generator, max_angle: float = 15.0,
                  max_shift: int = 4) -> np.ndarray:
    angle = rng.uniform(-max_angle, max_angle)
    dx, dy = rng.integers(-max_shift, max_shift + 1, size=2)
    return rotate_translate(patch, angle, int(dx), int(dy))


def augment_bike(sample: Sample, rng: np.random.Generator, max_angle: float = 15.0,
                 max_shift: int = 4) -> Sample:
    if sample.class_label != CLASS_INDEX["bike"]:
        raise ValueError(f"augment_bike on class {CLASSES[sample.class_label]!r}")
    return Sample(augment_patch(sample.patch, rng, max_angle, max_shift), sample.class_label,
                  sample.track_id, sample.frame_index, sample.origin)


def scene_frames(stream: EventStream, tracks, frame_cfg: FrameConfig) -> list[Frame]:
    end = max([stream.duration] + [tr.t_last + 1 for tr in tracks])
    return accumulate(stream, frame_cfg, n_frames=-(-end // frame_cfg.t_frame))


def propose(where: Frame, source: ProposalSource, cfg: ProposalConfig = ProposalConfig()):
    if source is ProposalSource.CCL_RP:
        return ccl_rp(where, cfg.min_area, cfg.patch, cfg.connectivity, cfg.denoise or None,
                      cfg.refine)
    if source is ProposalSource.HIST_RP:
        return hist_rp(where, cfg.hist_threshold, cfg.hist_min_run, cfg.denoise or None)
    raise ValueError(f"no proposal method for {source}")


def scene_samples(stream: EventStream, tracks, rp_source: ProposalSource,
                  representation: Representation, frame_cfg: FrameConfig = FrameConfig(),
                  rp_cfg: ProposalConfig = ProposalConfig(), ds_cfg: DatasetConfig = DatasetConfig(),
                  enrich: bool = False) -> list[Sample]:
    """All classifier samples of one scene, optionally with bus/truck corner patches."""
    samples = []
    for frame in scene_frames(stream, tracks, frame_cfg):
        where, what = what_where_split(frame)
        rep = convert(what, representation)
        mid = frame_mid_time(frame.index, frame_cfg.t_frame)
        if rp_source is ProposalSource.GT:
            pairs = [(b, tr.track_id, tr.class_label) for tr in tracks
                     if (b := tr.box_at(mid)) is not None]
        else:
            props = propose(where, rp_source, rp_cfg)
            pairs = [(p.box, tid, cls) for p, tid, cls in
                     match_proposals(props, tracks, frame_cfg.t_frame, ds_cfg.iou_min)]
        for box, tid, cls in pairs:
            label = CLASS_INDEX[cls]
            samples.append(Sample(extract_patch(rep, box, mask_outside_box=ds_cfg.mask_outside_box),
                                  label, tid, frame.index, rp_source))
            if enrich and cls in ENRICHED_CLASSES and (box.w > PATCH or box.h > PATCH):
                for cb in corner_patches(box, frame_cfg.width, frame_cfg.height):
                    samples.append(Sample(extract_patch(rep, cb), label, tid, frame.index, rp_source))
    return samples


def split_by_track(samples, val_fraction: float, rng: np.random.Generator):
    """Class-stratified train/val split over whole tracks."""
    tracks_by_class: dict[int, list[int]] = {}
    for s in samples:
        ids = tracks_by_class.setdefault(s.class_label, [])
        if s.track_id not in ids:
            ids.append(s.track_id)
    val_tracks = set()
    for cls in sorted(tracks_by_class):
        ids = sorted(tracks_by_class[cls])
        n_val = round(val_fraction * len(ids)) if len(ids) > 1 else 0
        if len(ids) > 1 and val_fraction > 0:
            n_val = min(max(n_val, 1), len(ids) - 1)
        perm = rng.permutation(len(ids))
        val_tracks.update(ids[i] for i in perm[:n_val])
    train = [s for s in samples if s.track_id not in val_tracks]
    val = [s for s in samples if s.track_id in val_tracks]
    return train, val


def balance_classes(samples, rng: np.random.Generator, max_angle: float = 15.0,
                    max_shift: int = 4) -> list[Sample]:
    """Top every class up to the largest class count with augmented copies."""
    by_class: dict[int, list[Sample]] = {}
    for s in samples:
        by_class.setdefault(s.class_label, []).append(s)
    target = max(len(v) for v in by_class.values())
    out = list(samples)
    for cls in sorted(by_class):
        pool = by_class[cls]
        order = rng.permutation(len(pool))
        for i in range(target - len(pool)):
            src = pool[order[i % len(pool)]]
            out.append(Sample(augment_patch(src.patch, rng, max_angle, max_shift), cls,
                              src.track_id, src.frame_index, src.origin))
    return out


def _require_all_classes(samples, where: str):
    present = {s.class_label for s in samples}
    for i, name in enumerate(CLASSES):
        if i not in present:
            raise ValueError(f"class {name!r} has no tracks in {where}")


def build_dataset(train_scenes, test_scenes, rp_source: ProposalSource,
                  representation: Representation, balance: bool = True,
                  frame_cfg: FrameConfig = FrameConfig(), rp_cfg: ProposalConfig = ProposalConfig(),
                  ds_cfg: DatasetConfig = DatasetConfig()) -> DatasetSplit:
    """Assemble train/val/test samples from ``(EventStream, tracks)`` scene pairs.

    Corner-patch enrichment and balancing touch the training side only; the
    test side holds plain samples from the held-out scenes.
    """
    rp_source = ProposalSource(rp_source)
    representation = Representation(representation)
    if not train_scenes or not test_scenes:
        raise ValueError("need at least one training scene and one test scene")
    rng = np.random.default_rng(ds_cfg.seed)
    pool = []
    for stream, tracks in train_scenes:
        pool += scene_samples(stream, tracks, rp_source, representation, frame_cfg, rp_cfg,
                              ds_cfg, enrich=True)
    _require_all_classes(pool, "training scenes")
    train, val = split_by_track(pool, ds_cfg.val_fraction, rng)
    if balance:
        train = balance_classes(train, rng, ds_cfg.max_angle, ds_cfg.max_shift)
    test = []
    for stream, tracks in test_scenes:
        test += scene_samples(stream, tracks, rp_source, representation, frame_cfg, rp_cfg, ds_cfg)
    _require_all_classes(test, "test scenes")
    split = DatasetSplit(train, val, test)
    split.check_leakage()
    return split


def stack(samples) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(patches, labels, track_ids)`` arrays for a sample list."""
    if not samples:
        return np.zeros((0, PATCH, PATCH, 1), np.uint8), np.zeros(0, np.int64), np.zeros(0, np.int64)
    x = np.stack([s.patch for s in samples])
    y = np.array([s.class_label for s in samples], np.int64)
    t = np.array([s.track_id for s in samples], np.int64)
    return x, y, t


def _record_dtype(channels: int) -> np.dtype:
    return np.dtype([("cls", "u1"), ("track", "<u4"), ("frame", "<u4"),
                     ("patch", "u1", (PATCH, PATCH, channels))])


def save_dataset(split: DatasetSplit, directory, representation: Representation,
                 provenance: dict | None = None) -> None:
    """Write ``manifest.json`` plus one packed record file per split."""
    representation = Representation(representation)
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    dtype = _record_dtype(representation.channels)
    manifest = {
        "format": DATASET_FORMAT,
        "representation": representation.value,
        "channels": representation.channels,
        "patch": PATCH,
        "class_map": {name: i for i, name in enumerate(CLASSES)},
        "record": "u8 class, u32 track, u32 frame, 42*42*C u8 counts (y, x, c order), little-endian",
        "provenance": provenance or {},
        "splits": {},
    }
    for name in ("train", "val", "test"):
        samples = getattr(split, name)
        rec = np.zeros(len(samples), dtype)
        for i, s in enumerate(samples):
            rec[i] = (s.class_label, s.track_id, s.frame_index, s.patch)
        (directory / f"{name}.bin").write_bytes(rec.tobytes())
        origins = sorted({s.origin.value for s in samples})
        manifest["splits"][name] = {"file": f"{name}.bin", "count": len(samples), "origin": origins}
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_dataset(directory) -> tuple[DatasetSplit, dict]:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    dtype = _record_dtype(manifest["channels"])
    split = DatasetSplit()
    for name, info in manifest["splits"].items():
        rec = np.frombuffer((directory / info["file"]).read_bytes(), dtype)
        if len(rec) != info["count"]:
            raise ValueError(f"{name}: manifest says {info['count']} records, file has {len(rec)}")
        origin = ProposalSource(info["origin"][0]) if info["origin"] else ProposalSource.GT
        setattr(split, name, [
            Sample(r["patch"].copy(), int(r["cls"]), int(r["track"]), int(r["frame"]), origin)
            for r in rec
        ])
    return split, manifest
