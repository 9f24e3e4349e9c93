"""Axis-aligned rectangles in image coordinates (y grows downward)."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence


@dataclass(frozen=True)
class Rect:
    """Box given by its top-left corner and its size, in pixels."""

    x: float
    y: float
    w: float
    h: float

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    @property
    def area(self) -> float:
        return self.w * self.h

    @property
    def center(self) -> tuple[float, float]:
        return (self.x + self.w / 2.0, self.y + self.h / 2.0)

    def is_valid(self) -> bool:
        """True when all fields are finite and both extents are positive."""
        return (
            all(math.isfinite(v) for v in (self.x, self.y, self.w, self.h))
            and self.w > 0
            and self.h > 0
        )

    def intersection(self, other: Rect) -> Optional[Rect]:
        x0, y0 = max(self.x, other.x), max(self.y, other.y)
        x1, y1 = min(self.x2, other.x2), min(self.y2, other.y2)
        if x1 <= x0 or y1 <= y0:
            return None
        return Rect(x0, y0, x1 - x0, y1 - y0)

    def intersection_area(self, other: Rect) -> float:
        dx = min(self.x2, other.x2) - max(self.x, other.x)
        dy = min(self.y2, other.y2) - max(self.y, other.y)
        if dx <= 0 or dy <= 0:
            return 0.0
        return dx * dy

    def contains(self, other: Rect) -> bool:
        return (
            self.x <= other.x
            and self.y <= other.y
            and other.x2 <= self.x2
            and other.y2 <= self.y2
        )

    def clip(self, width: float, height: float) -> Optional[Rect]:
        """Clip to the frame ``[0, width] x [0, height]``; None if nothing remains."""
        return self.intersection(Rect(0.0, 0.0, width, height))

    def scaled(self, s: float) -> Rect:
        return Rect(self.x * s, self.y * s, self.w * s, self.h * s)

    def translated(self, dx: float, dy: float) -> Rect:
        return Rect(self.x + dx, self.y + dy, self.w, self.h)

    def as_list(self) -> list[float]:
        return [self.x, self.y, self.w, self.h]

    @classmethod
    def from_corners(cls, x0: float, y0: float, x1: float, y1: float) -> Rect:
        return cls(x0, y0, x1 - x0, y1 - y0)

    @classmethod
    def from_center(cls, cx: float, cy: float, w: float, h: float) -> Rect:
        return cls(cx - w / 2.0, cy - h / 2.0, w, h)


def bounding_rect(rects: Iterable[Rect]) -> Optional[Rect]:
    rects = list(rects)
    if not rects:
        return None
    return Rect.from_corners(
        min(r.x for r in rects),
        min(r.y for r in rects),
        max(r.x2 for r in rects),
        max(r.y2 for r in rects),
    )


def rect_difference(target: Rect, occluder: Rect) -> list[Rect]:
    """Split ``target`` minus ``occluder`` into disjoint rectangles.

    At most four pieces come back: full-height left and right strips, then
    top and bottom strips spanning the overlap's columns.
    """
    inter = target.intersection(occluder)
    if inter is None:
        return [target]
    pieces = []
    if inter.x > target.x:
        pieces.append(Rect.from_corners(target.x, target.y, inter.x, target.y2))
    if inter.x2 < target.x2:
        pieces.append(Rect.from_corners(inter.x2, target.y, target.x2, target.y2))
    if inter.y > target.y:
        pieces.append(Rect.from_corners(inter.x, target.y, inter.x2, inter.y))
    if inter.y2 < target.y2:
        pieces.append(Rect.from_corners(inter.x, inter.y2, inter.x2, target.y2))
    return pieces


def visible_region(target: Rect, occluders: Sequence[Rect]) -> tuple[Optional[Rect], float]:
    """Tight box and area fraction of ``target`` left uncovered by ``occluders``.

    Exact for any number of occluders: the plane is cut into the cells of
    the grid spanned by every rectangle edge inside the target, and each
    cell is either wholly covered or wholly free.
    """
    occluders = [o for o in occluders if target.intersection_area(o) > 0]
    if not occluders:
        return target, 1.0
    xs = sorted({target.x, target.x2, *(min(max(v, target.x), target.x2) for o in occluders for v in (o.x, o.x2))})
    ys = sorted({target.y, target.y2, *(min(max(v, target.y), target.y2) for o in occluders for v in (o.y, o.y2))})
    free_area = 0.0
    x0 = y0 = math.inf
    x1 = y1 = -math.inf
    for i in range(len(xs) - 1):
        cx = 0.5 * (xs[i] + xs[i + 1])
        for j in range(len(ys) - 1):
            cy = 0.5 * (ys[j] + ys[j + 1])
            if any(o.x <= cx <= o.x2 and o.y <= cy <= o.y2 for o in occluders):
                continue
            free_area += (xs[i + 1] - xs[i]) * (ys[j + 1] - ys[j])
            x0, x1 = min(x0, xs[i]), max(x1, xs[i + 1])
            y0, y1 = min(y0, ys[j]), max(y1, ys[j + 1])
    if free_area <= 0:
        return None, 0.0
    return Rect.from_corners(x0, y0, x1, y1), free_area / target.area
