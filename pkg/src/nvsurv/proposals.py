"""Region proposals from the binary where-pathway frame.

CCL RP: OR-downsample by a patch (6x3 on a 240x180 sensor gives a 40x60
grid, stored as 60 rows x 40 columns), label connected components, take each
component's bounding box and scale it back to sensor pixels.

HIST RP: threshold the column and row projections of the frame and pair
every column run with every row run.
"""

from __future__ import annotations

import csv
import enum
import io
from dataclasses import dataclass

import numpy as np

from .boxes import BoundingBox
from .frames import Frame, Representation, suppress_isolated


class ProposalSource(str, enum.Enum):
    GT = "gt"
    CCL_RP = "ccl"
    HIST_RP = "hist"


@dataclass(frozen=True)
class Proposal:
    frame_index: int
    box: BoundingBox
    source: ProposalSource


@dataclass(frozen=True, eq=False)
class LabelMap:
    labels: np.ndarray  # (height, width) uint32, 0 = background
    component_count: int

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]


def _binary_image(frame) -> np.ndarray:
    if isinstance(frame, Frame):
        if frame.representation is not Representation.ONE_BIT_1CH:
            raise TypeError(f"expected a ONE_BIT_1CH frame, got {frame.representation.name}")
        return frame.data[..., 0]
    img = np.asarray(frame)
    if img.ndim == 3 and img.shape[2] == 1:
        img = img[..., 0]
    if img.ndim != 2:
        raise ValueError(f"expected a 2-D binary image, got shape {img.shape}")
    return img


def downsample_or(frame, patch_w: int = 6, patch_h: int = 3) -> np.ndarray:
    """OR-reduce every ``patch_w`` x ``patch_h`` block; returns a (H/patch_h, W/patch_w) uint8 image."""
    img = _binary_image(frame)
    h, w = img.shape
    if w % patch_w or h % patch_h:
        raise ValueError(f"{w}x{h} image is not divisible into {patch_w}x{patch_h} patches")
    blocks = img.reshape(h // patch_h, patch_h, w // patch_w, patch_w)
    return blocks.any(axis=(1, 3)).astype(np.uint8)


def _row_runs(row: np.ndarray) -> tuple[list[int], list[int]]:
    padded = np.zeros(len(row) + 2, np.int8)
    padded[1:-1] = row != 0
    d = np.diff(padded)
    return np.flatnonzero(d == 1).tolist(), np.flatnonzero(d == -1).tolist()


def ccl_label(image, connectivity: int = 8) -> LabelMap:
    """Two-pass connected component labeling over row runs.

    Pass one gives each foreground run a provisional label and unions it with
    every touching run of the previous row; pass two resolves labels through
    the union-find forest and renumbers them 1..N in raster order of first
    appearance.
    """
    if connectivity not in (4, 8):
        raise ValueError(f"connectivity must be 4 or 8, got {connectivity}")
    img = _binary_image(image)
    h, w = img.shape
    reach = 1 if connectivity == 8 else 0
    parent: list[int] = []

    def find(a: int) -> int:
        root = a
        while parent[root] != root:
            root = parent[root]
        while parent[a] != root:
            parent[a], a = root, parent[a]
        return root

    runs = []  # (row, start, end, provisional label)
    prev: list[tuple[int, int, int]] = []
    for r in range(h):
        starts, ends = _row_runs(img[r])
        cur = []
        j = 0
        for s, e in zip(starts, ends):
            label = -1
            # previous-row runs are sorted; skip ones entirely to the left
            while j < len(prev) and prev[j][1] + reach <= s:
                j += 1
            k = j
            while k < len(prev) and prev[k][0] < e + reach:
                root = find(prev[k][2])
                if label < 0:
                    label = root
                elif root != label:
                    if root < label:
                        root, label = label, root
                    parent[root] = label
                k += 1
            if label < 0:
                label = len(parent)
                parent.append(label)
            cur.append((s, e, label))
            runs.append((r, s, e, label))
        prev = cur

    labels = np.zeros((h, w), np.uint32)
    dense: dict[int, int] = {}
    for r, s, e, label in runs:
        root = find(label)
        n = dense.get(root)
        if n is None:
            n = dense[root] = len(dense) + 1
        labels[r, s:e] = n
    return LabelMap(labels, len(dense))


def component_boxes(lm: LabelMap) -> list[tuple[BoundingBox, int]]:
    """Tight box and pixel count for each label 1..N, in label order."""
    out = []
    if lm.component_count == 0:
        return out
    ys, xs = np.nonzero(lm.labels)
    lab = lm.labels[ys, xs].astype(np.int64)
    n = lm.component_count + 1
    area = np.bincount(lab, minlength=n)
    x_min = np.full(n, np.iinfo(np.int64).max)
    y_min = np.full(n, np.iinfo(np.int64).max)
    x_max = np.full(n, -1)
    y_max = np.full(n, -1)
    np.minimum.at(x_min, lab, xs)
    np.minimum.at(y_min, lab, ys)
    np.maximum.at(x_max, lab, xs)
    np.maximum.at(y_max, lab, ys)
    for i in range(1, n):
        box = BoundingBox(int(x_min[i]), int(y_min[i]), int(x_max[i] - x_min[i] + 1),
                          int(y_max[i] - y_min[i] + 1))
        out.append((box, int(area[i])))
    return out


def ccl_rp(frame: Frame, min_area: int = 2, patch: tuple[int, int] = (6, 3),
           connectivity: int = 8, denoise: int | None = None,
           refine: bool = False) -> list[Proposal]:
    """Connected-component proposals for one where-pathway frame.

    ``denoise`` runs :func:`suppress_isolated` with that neighbour count
    first. ``refine`` shrinks each scaled-back box to the set sensor pixels
    it covers.
    """
    if denoise:
        frame = suppress_isolated(frame, denoise)
    img = _binary_image(frame)
    h, w = img.shape
    pw, ph = patch
    small = downsample_or(img, pw, ph)
    lm = ccl_label(small, connectivity)
    proposals = []
    for box, area in component_boxes(lm):
        if area < min_area:
            continue
        full = BoundingBox(box.x0 * pw, box.y0 * ph, box.w * pw, box.h * ph).clamp(w, h)
        if full is None:
            continue
        if refine:
            full = _tighten(img, full) or full
        proposals.append(Proposal(frame.index, full, ProposalSource.CCL_RP))
    return proposals


def _tighten(img: np.ndarray, box: BoundingBox) -> BoundingBox | None:
    region = img[box.y0:box.y1, box.x0:box.x1]
    ys, xs = np.nonzero(region)
    if len(xs) == 0:
        return None
    return BoundingBox(box.x0 + int(xs.min()), box.y0 + int(ys.min()),
                       int(xs.max() - xs.min() + 1), int(ys.max() - ys.min() + 1))


def _runs(profile: np.ndarray, threshold: int, min_run: int) -> list[tuple[int, int]]:
    starts, ends = _row_runs(profile >= threshold)
    return [(s, e) for s, e in zip(starts, ends) if e - s >= min_run]


def hist_rp(frame: Frame, threshold: int = 2, min_run: int = 3,
            denoise: int | None = None) -> list[Proposal]:
    """Histogram-projection proposals: every (column run x row run) box holding any event."""
    if denoise:
        frame = suppress_isolated(frame, denoise)
    img = _binary_image(frame).astype(np.int64)
    col_runs = _runs(img.sum(axis=0), threshold, min_run)
    row_runs = _runs(img.sum(axis=1), threshold, min_run)
    proposals = []
    for y0, y1 in row_runs:
        for x0, x1 in col_runs:
            if img[y0:y1, x0:x1].any():
                proposals.append(Proposal(frame.index, BoundingBox(x0, y0, x1 - x0, y1 - y0),
                                          ProposalSource.HIST_RP))
    return proposals


PROPOSAL_CSV_HEADER = ("frame", "x0", "y0", "w", "h", "source")


def proposals_to_csv(proposals) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(PROPOSAL_CSV_HEADER)
    for p in proposals:
        wr.writerow((p.frame_index, p.box.x0, p.box.y0, p.box.w, p.box.h, p.source.value))
    return buf.getvalue()


def proposals_from_csv(text: str) -> list[Proposal]:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(rows[0]) != PROPOSAL_CSV_HEADER:
        raise ValueError(f"proposal CSV must start with header {','.join(PROPOSAL_CSV_HEADER)}")
    return [
        Proposal(int(k), BoundingBox(int(x0), int(y0), int(w), int(h)), ProposalSource(src))
        for k, x0, y0, w, h, src in rows[1:]
    ]
