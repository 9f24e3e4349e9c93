"""Occlusion events, their (ratio bin x direction) histogram, and Monte-Carlo sampling.

A target's occlusion is described by two numbers: the fraction of its box
covered by an occluder and the compass direction of the occluder's centre
as seen from the target's centre. Directions use image coordinates, so
``N`` points toward smaller y.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .annotations import Annotation
from .geometry import Rect

__all__ = [
    "Direction",
    "Source",
    "SYNTHETIC",
    "DEFAULT_BIN_EDGES",
    "OcclusionEvent",
    "RatioBins",
    "OcclusionHistogram",
    "OcclusionSample",
    "EmptyHistogramError",
    "overlap_ratio",
    "direction_from_offset",
    "occlusion_direction",
    "infer_events",
    "estimate_histogram",
    "sample_point",
    "sample_points",
    "cell_sample",
    "total_variation",
]


class Direction(str, enum.Enum):
    N = "N"
    NE = "NE"
    E = "E"
    SE = "SE"
    S = "S"
    SW = "SW"
    W = "W"
    NW = "NW"
    CENTER = "CENTER"

    @property
    def unit(self) -> tuple[float, float]:
        """Bisector of the octant as an image-space unit vector (zero for CENTER)."""
        if self is Direction.CENTER:
            return (0.0, 0.0)
        a = math.radians(45.0 * _COMPASS.index(self))
        return (math.sin(a), -math.cos(a))


# clockwise order starting at north
_COMPASS = [Direction.N, Direction.NE, Direction.E, Direction.SE, Direction.S, Direction.SW, Direction.W, Direction.NW]
DIRECTIONS = _COMPASS + [Direction.CENTER]


class Source(str, enum.Enum):
    INFERRED = "INFERRED"
    ORACLE = "ORACLE"


SYNTHETIC = "SYNTHETIC"
DEFAULT_BIN_EDGES = (0.0, 0.1, 0.25, 0.5, 0.75, 0.9, 1.0)


class EmptyHistogramError(ValueError):
    pass


@dataclass(frozen=True)
class OcclusionEvent:
    target_category: int
    occluder_category: Union[int, str]
    ratio: float
    direction: Direction
    source: Source = Source.INFERRED

    def __post_init__(self):
        if not 0.0 <= self.ratio <= 1.0:
            raise ValueError(f"occlusion ratio {self.ratio} outside [0, 1]")

    def to_json(self) -> dict:
        return {
            "target_category": self.target_category,
            "occluder_category": self.occluder_category,
            "ratio": self.ratio,
            "direction": self.direction.value,
            "source": self.source.value,
        }

    @classmethod
    def from_json(cls, doc: dict) -> OcclusionEvent:
        return cls(
            int(doc["target_category"]),
            doc["occluder_category"],
            float(doc["ratio"]),
            Direction(doc["direction"]),
            Source(doc.get("source", "ORACLE")),
        )


@dataclass(frozen=True)
class RatioBins:
    edges: tuple[float, ...] = DEFAULT_BIN_EDGES

    def __post_init__(self):
        edges = tuple(float(e) for e in self.edges)
        if len(edges) < 2:
            raise ValueError("need at least two bin edges")
        if edges[0] != 0.0 or edges[-1] != 1.0:
            raise ValueError("bin edges must start at 0 and end at 1")
        if any(b <= a for a, b in zip(edges, edges[1:])):
            raise ValueError("bin edges must be strictly ascending")
        object.__setattr__(self, "edges", edges)

    def __len__(self) -> int:
        return len(self.edges) - 1

    def index(self, ratio: float) -> int:
        # right-open bins, except that 1.0 belongs to the last one
        k = int(np.searchsorted(self.edges, ratio, side="right")) - 1
        return min(max(k, 0), len(self) - 1)


@dataclass(frozen=True)
class OcclusionSample:
    ratio_lo: float
    ratio_hi: float
    direction: Direction


@dataclass(frozen=True, eq=False)
class OcclusionHistogram:
    category: int
    bins: RatioBins
    counts: np.ndarray  # shape (len(bins), 9), column order of DIRECTIONS

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def empty(self) -> bool:
        return self.total == 0

    @property
    def probabilities(self) -> np.ndarray:
        if self.empty:
            return np.full(self.counts.shape, np.nan)
        return self.counts / self.counts.sum()

    def __eq__(self, other) -> bool:
        if not isinstance(other, OcclusionHistogram):
            return NotImplemented
        return (
            self.category == other.category
            and self.bins == other.bins
            and np.array_equal(self.counts, other.counts)
        )

    def cell(self, ratio_bin: int, direction: Direction) -> int:
        return int(self.counts[ratio_bin, DIRECTIONS.index(direction)])

    def to_json(self) -> dict:
        return {
            "category": self.category,
            "bin_edges": list(self.bins.edges),
            "directions": [d.value for d in DIRECTIONS],
            "counts": self.counts.tolist(),
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)

    @classmethod
    def from_json(cls, doc: dict) -> OcclusionHistogram:
        bins = RatioBins(tuple(doc["bin_edges"]))
        dirs = [Direction(d) for d in doc["directions"]]
        raw = np.asarray(doc["counts"], dtype=np.int64)
        if raw.shape != (len(bins), len(dirs)):
            raise ValueError(f"counts shape {raw.shape} does not match bins x directions")
        if (raw < 0).any():
            raise ValueError("histogram counts must be non-negative")
        counts = np.zeros((len(bins), len(DIRECTIONS)), dtype=np.int64)
        for j, d in enumerate(dirs):
            counts[:, DIRECTIONS.index(d)] = raw[:, j]
        return cls(int(doc["category"]), bins, counts)


def overlap_ratio(a: Rect, b: Rect) -> float:
    """Fraction of ``a``'s area covered by ``b``."""
    if not a.w * a.h > 0:
        raise ValueError(f"degenerate rectangle {a}")
    return min(1.0, a.intersection_area(b) / a.area)


def direction_from_offset(dx: float, dy: float, center_radius: float) -> Direction:
    """Octant of the offset ``(dx, dy)``; y grows downward.

    Offsets no longer than ``center_radius`` are CENTER. An angle lying
    exactly on an octant boundary goes to the clockwise neighbour.
    """
    if math.hypot(dx, dy) <= center_radius:
        return Direction.CENTER
    bearing = math.degrees(math.atan2(dx, -dy)) % 360.0
    return _COMPASS[int(math.floor((bearing + 22.5) / 45.0)) % 8]


def occlusion_direction(target: Rect, occluder: Rect) -> Direction:
    tx, ty = target.center
    ox, oy = occluder.center
    return direction_from_offset(ox - tx, oy - ty, 0.1 * min(target.w, target.h))


def _axis_gap(a0, a1, b0, b1) -> float:
    return max(b0 - a1, a0 - b1)


def infer_events(
    annotations: Sequence[Annotation],
    r_min: float = 0.05,
    adjacency_gap: float = 2.0,
) -> list[OcclusionEvent]:
    """Occlusion events implied by the boxes of one image.

    Depth order cannot be read off visible-region boxes, so every
    overlapping pair yields an event in both directions. Disjoint boxes that
    sit within ``adjacency_gap`` of each other along one axis while sharing
    extent on the other produce ratio-0 events.
    """
    image_ids = {a.image_id for a in annotations}
    if len(image_ids) > 1:
        raise ValueError(f"annotations span several images: {sorted(image_ids)}")
    events = []
    for t in annotations:
        for o in annotations:
            if t is o:
                continue
            a, b = t.bbox, o.bbox
            inter = a.intersection_area(b)
            if inter > 0:
                ratio = overlap_ratio(a, b)
                if ratio >= r_min:
                    events.append(OcclusionEvent(t.category_id, o.category_id, ratio, occlusion_direction(a, b)))
                continue
            gx = _axis_gap(a.x, a.x2, b.x, b.x2)
            gy = _axis_gap(a.y, a.y2, b.y, b.y2)
            adjacent = (0 <= gx <= adjacency_gap and gy < 0) or (0 <= gy <= adjacency_gap and gx < 0)
            if adjacent:
                events.append(OcclusionEvent(t.category_id, o.category_id, 0.0, occlusion_direction(a, b)))
    return events


def estimate_histogram(
    events: Iterable[OcclusionEvent],
    category: int,
    bins: RatioBins = RatioBins(),
) -> OcclusionHistogram:
    counts = np.zeros((len(bins), len(DIRECTIONS)), dtype=np.int64)
    for ev in events:
        if ev.target_category == category:
            counts[bins.index(ev.ratio), DIRECTIONS.index(ev.direction)] += 1
    return OcclusionHistogram(category, bins, counts)


def cell_sample(hist: OcclusionHistogram, flat_index: int) -> OcclusionSample:
    i, j = divmod(int(flat_index), len(DIRECTIONS))
    return OcclusionSample(hist.bins.edges[i], hist.bins.edges[i + 1], DIRECTIONS[j])


def sample_points(hist: OcclusionHistogram, rng: np.random.Generator, n: int) -> np.ndarray:
    """Flat cell indices of ``n`` draws, each cell chosen with probability count/total."""
    if hist.empty:
        raise EmptyHistogramError(f"histogram for category {hist.category} is empty")
    cumulative = np.cumsum(hist.counts.ravel())
    u = rng.random(n) * cumulative[-1]
    return np.searchsorted(cumulative, u, side="right")


def sample_point(hist: OcclusionHistogram, rng: np.random.Generator) -> OcclusionSample:
    return cell_sample(hist, sample_points(hist, rng, 1)[0])


def total_variation(p: np.ndarray, q: np.ndarray) -> float:
    return 0.5 * float(np.abs(np.asarray(p, float) - np.asarray(q, float)).sum())
