"""Axis-aligned integer bounding boxes and intersection-over-union."""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True, order=True)
class BoundingBox:
    """Box with inclusive top-left corner ``(x0, y0)`` and extent ``w`` x ``h`` pixels."""

    x0: int
    y0: int
    w: int
    h: int

    def __post_init__(self):
        if self.w < 1 or self.h < 1:
            raise ValueError(f"box extent must be >= 1x1, got {self.w}x{self.h}")

    @property
    def x1(self) -> int:
        """Exclusive right edge."""
        return self.x0 + self.w

    @property
    def y1(self) -> int:
        """Exclusive bottom edge."""
        return self.y0 + self.h

    @property
    def area(self) -> int:
        return self.w * self.h

    @property
    def centroid(self) -> tuple[float, float]:
        return self.x0 + self.w / 2.0, self.y0 + self.h / 2.0

    def clamp(self, width: int, height: int) -> BoundingBox | None:
        """Intersect with the ``width`` x ``height`` sensor; None if nothing is left."""
        x0, y0 = max(self.x0, 0), max(self.y0, 0)
        x1, y1 = min(self.x1, width), min(self.y1, height)
        if x1 <= x0 or y1 <= y0:
            return None
        return BoundingBox(x0, y0, x1 - x0, y1 - y0)

    def intersection_area(self, other: BoundingBox) -> int:
        dx = min(self.x1, other.x1) - max(self.x0, other.x0)
        dy = min(self.y1, other.y1) - max(self.y0, other.y0)
        if dx <= 0 or dy <= 0:
            return 0
        return dx * dy

    def contains_point(self, x: int, y: int) -> bool:
        return self.x0 <= x < self.x1 and self.y0 <= y < self.y1


def iou(a: BoundingBox, b: BoundingBox) -> float:
    inter = a.intersection_area(b)
    if inter == 0:
        return 0.0
    return inter / (a.area + b.area - inter)


def round_half_up(v: float) -> int:
    return int(math.floor(v + 0.5))
