"""Synthetic shelf layers seen by a top-centre equidistant fisheye camera.

The simulator places products on one shelf layer following simple retail
rules (tall goods along the walls, small goods in the middle, large goods
around the edge), decides visibility by casting segments from the camera to
points sampled on every camera-facing face, and reports visible-region boxes
together with the exact occlusion events. Those events are the ground truth
against which box-based occlusion inference can be measured.

Layer coordinates are centimetres with the origin at the back-left corner:
x runs to the right, y runs from the back wall toward the open front and z
is height above the layer floor. The back wall therefore appears at the top
of the image. Cylinders are treated as their bounding cuboids throughout.
"""

from __future__ import annotations

import colorsys
import enum
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .annotations import Annotation, CategoryTable, Dataset, ImageRecord
from .geometry import Rect
from .occlusion import OcclusionEvent, Source, direction_from_offset
from .streams import substream

log = logging.getLogger(__name__)

__all__ = [
    "Shape",
    "SizeClass",
    "CatalogItem",
    "LayerSpec",
    "FisheyeCamera",
    "PlacedObject",
    "SceneSpec",
    "ObjectVisibility",
    "OracleAnnotationSet",
    "SceneConfig",
    "SynthResult",
    "classify_catalog",
    "default_catalog",
    "place_layer",
    "project_fisheye",
    "project_points",
    "visible_annotations",
    "render_scene",
    "simulate_scene",
    "synth_dataset",
]


class Shape(str, enum.Enum):
    CUBOID = "CUBOID"
    CYLINDER = "CYLINDER"


class SizeClass(str, enum.Enum):
    SMALL = "SMALL"
    LARGE = "LARGE"
    TALL = "TALL"


@dataclass(frozen=True)
class CatalogItem:
    category_id: int
    name: str
    width: float
    depth: float
    height: float
    shape: Shape = Shape.CUBOID
    size_class: Optional[SizeClass] = None

    def __post_init__(self):
        if min(self.width, self.depth, self.height) <= 0:
            raise ValueError(f"catalog item {self.name!r} needs positive dimensions")

    @property
    def footprint_area(self) -> float:
        return self.width * self.depth


def classify_catalog(
    catalog: Sequence[CatalogItem], tall_factor: float = 1.5, small_factor: float = 0.5
) -> list[CatalogItem]:
    """Assign size classes relative to the catalog's median height and footprint."""
    if not catalog:
        return []
    med_h = float(np.median([c.height for c in catalog]))
    med_a = float(np.median([c.footprint_area for c in catalog]))
    out = []
    for c in catalog:
        if c.height > tall_factor * med_h:
            cls = SizeClass.TALL
        elif c.footprint_area < small_factor * med_a:
            cls = SizeClass.SMALL
        else:
            cls = SizeClass.LARGE
        out.append(replace(c, size_class=cls))
    return out


def default_catalog() -> list[CatalogItem]:
    """A mixed drinks-and-snacks assortment, already classified."""
    C, Y = Shape.CUBOID, Shape.CYLINDER
    items = [
        CatalogItem(1, "cola_can", 6.6, 6.6, 12.2, Y),
        CatalogItem(2, "milk_box", 6.0, 4.0, 12.0, C),
        CatalogItem(3, "yogurt_cup", 6.5, 6.5, 8.0, Y),
        CatalogItem(4, "candy_box", 8.0, 5.0, 3.0, C),
        CatalogItem(5, "water_bottle", 6.5, 6.5, 22.0, Y),
        CatalogItem(6, "juice_bottle", 7.0, 7.0, 24.0, Y),
        CatalogItem(7, "snack_bag", 20.0, 14.0, 6.0, C),
        CatalogItem(8, "biscuit_box", 16.0, 10.0, 5.0, C),
        CatalogItem(9, "noodle_cup", 12.0, 12.0, 10.0, Y),
        CatalogItem(10, "cereal_box", 19.0, 7.0, 14.0, C),
        CatalogItem(11, "chips_bag", 22.0, 14.0, 9.0, C),
        CatalogItem(12, "cookie_tin", 18.0, 18.0, 7.0, Y),
    ]
    return classify_catalog(items)


@dataclass(frozen=True)
class LayerSpec:
    width: float = 60.0
    depth: float = 40.0
    wall_margin: float = 3.0
    # a shelf layer is open at the front
    walls: tuple[str, ...] = ("back", "left", "right")
    camera_mount: str = "top-center"

    def __post_init__(self):
        if self.width <= 0 or self.depth <= 0 or self.wall_margin < 0:
            raise ValueError("layer extents must be positive")
        bad = set(self.walls) - {"back", "left", "right", "front"}
        if bad:
            raise ValueError(f"unknown walls {sorted(bad)}")

    @property
    def central_region(self) -> tuple[float, float, float, float]:
        """Central 40% of each axis as (x0, y0, x1, y1)."""
        return (0.3 * self.width, 0.3 * self.depth, 0.7 * self.width, 0.7 * self.depth)


@dataclass(frozen=True)
class FisheyeCamera:
    """Equidistant fisheye (r = f * theta) looking straight down at the layer."""

    height: float = 30.0
    focal: float = 100.0
    image_width: int = 320
    image_height: int = 320
    cx: Optional[float] = None
    cy: Optional[float] = None
    # camera position over the layer, cm; None means the layer centre
    position: Optional[tuple[float, float]] = None

    def __post_init__(self):
        if self.focal <= 0 or self.height <= 0:
            raise ValueError("focal constant and mount height must be positive")
        if self.cx is None:
            object.__setattr__(self, "cx", self.image_width / 2.0)
        if self.cy is None:
            object.__setattr__(self, "cy", self.image_height / 2.0)
        rmax = self.focal * math.pi / 2.0
        room = min(self.cx, self.image_width - self.cx, self.cy, self.image_height - self.cy)
        if rmax > room:
            raise ValueError(f"theta = pi/2 maps to radius {rmax:.1f} px, outside the {room:.1f} px available")

    @property
    def principal_point(self) -> tuple[float, float]:
        return (self.cx, self.cy)

    def mount(self, layer: LayerSpec) -> tuple[float, float, float]:
        x, y = self.position if self.position is not None else (layer.width / 2.0, layer.depth / 2.0)
        return (float(x), float(y), float(self.height))


@dataclass(frozen=True)
class PlacedObject:
    item: CatalogItem
    x: float  # footprint centre
    y: float
    rotation: int = 0  # degrees, multiple of 90

    @property
    def size(self) -> tuple[float, float]:
        if self.rotation % 180 == 90:
            return (self.item.depth, self.item.width)
        return (self.item.width, self.item.depth)

    @property
    def footprint(self) -> tuple[float, float, float, float]:
        w, d = self.size
        return (self.x - w / 2.0, self.y - d / 2.0, self.x + w / 2.0, self.y + d / 2.0)

    @property
    def box(self) -> tuple[float, float, float, float, float, float]:
        x0, y0, x1, y1 = self.footprint
        return (x0, y0, 0.0, x1, y1, self.item.height)


@dataclass(frozen=True)
class SceneSpec:
    layer: LayerSpec
    objects: tuple[PlacedObject, ...] = ()
    skipped: tuple[CatalogItem, ...] = ()


@dataclass(frozen=True)
class ObjectVisibility:
    index: int
    category_id: int
    bbox: Optional[Rect]
    visible_fraction: float
    n_samples: int


@dataclass
class OracleAnnotationSet:
    objects: list[ObjectVisibility]
    events: list[OcclusionEvent]
    dropped: list[int]
    # (target index, occluder index) -> blocked sample count
    blocked: dict[tuple[int, int], int] = field(default_factory=dict)

    @property
    def annotated(self) -> list[ObjectVisibility]:
        dropped = set(self.dropped)
        return [o for o in self.objects if o.index not in dropped]


# -- placement -------------------------------------------------------------


def _candidate(item: CatalogItem, layer: LayerSpec, rng: np.random.Generator) -> PlacedObject:
    rotation = int(rng.integers(2)) * 90
    w, d = (item.depth, item.width) if rotation else (item.width, item.depth)
    W, D = layer.width, layer.depth
    if item.size_class is SizeClass.TALL:
        wall = layer.walls[int(rng.integers(len(layer.walls)))]
        gap = rng.uniform(0.0, layer.wall_margin)
        if wall in ("back", "front"):
            x = rng.uniform(w / 2.0, W - w / 2.0)
            y = gap + d / 2.0 if wall == "back" else D - gap - d / 2.0
        else:
            y = rng.uniform(d / 2.0, D - d / 2.0)
            x = gap + w / 2.0 if wall == "left" else W - gap - w / 2.0
    elif item.size_class is SizeClass.SMALL:
        x0, y0, x1, y1 = layer.central_region
        x, y = rng.uniform(x0, x1), rng.uniform(y0, y1)
    else:
        x, y = rng.uniform(w / 2.0, W - w / 2.0), rng.uniform(d / 2.0, D - d / 2.0)
    return PlacedObject(item, float(x), float(y), rotation)


def _admissible(obj: PlacedObject, layer: LayerSpec) -> bool:
    x0, y0, x1, y1 = obj.footprint
    if x0 < 0 or y0 < 0 or x1 > layer.width or y1 > layer.depth:
        return False
    if obj.item.size_class is SizeClass.LARGE:
        cx0, cy0, cx1, cy1 = layer.central_region
        if cx0 <= obj.x <= cx1 and cy0 <= obj.y <= cy1:
            return False
    return True


def place_layer(
    catalog: Sequence[CatalogItem],
    layer: LayerSpec,
    rng: np.random.Generator,
    spacing: float = 0.5,
    max_tries: int = 50,
    warn: bool = True,
) -> SceneSpec:
    """Greedy placement of every catalog entry, one object each, in list order.

    Unclassified items are classified against ``catalog`` itself. Items that
    find no free admissible spot within ``max_tries`` draws are skipped and
    listed in ``SceneSpec.skipped``; ``warn=False`` silences the log line
    when over-filling a layer on purpose.
    """
    if any(c.size_class is None for c in catalog):
        catalog = classify_catalog(catalog)
    placed: list[PlacedObject] = []
    skipped: list[CatalogItem] = []
    taken = np.zeros((0, 4))
    for item in catalog:
        for _ in range(max_tries):
            obj = _candidate(item, layer, rng)
            if not _admissible(obj, layer):
                continue
            x0, y0, x1, y1 = obj.footprint
            clash = (
                (x1 + spacing > taken[:, 0]) & (taken[:, 2] + spacing > x0)
                & (y1 + spacing > taken[:, 1]) & (taken[:, 3] + spacing > y0)
            )
            if not clash.any():
                placed.append(obj)
                taken = np.vstack([taken, obj.footprint])
                break
        else:
            if warn:
                log.warning("could not place %s (%s); skipped", item.name, item.size_class.value)
            skipped.append(item)
    return SceneSpec(layer, tuple(placed), tuple(skipped))


# -- projection ------------------------------------------------------------


def project_fisheye(point: Sequence[float], cam: FisheyeCamera) -> Optional[tuple[float, float]]:
    """Pixel position of a camera-frame point; None when it lies behind the lens plane.

    The camera frame has z along the optical axis. Raises ValueError for the
    optical centre itself.
    """
    x, y, z = (float(v) for v in point)
    rho = math.hypot(x, y)
    if rho == 0.0 and z == 0.0:
        raise ValueError("the optical centre has no projection")
    theta = math.atan2(rho, z)
    if theta > math.pi / 2.0:
        return None
    if rho == 0.0:
        return (cam.cx, cam.cy)
    r = cam.focal * theta
    return (cam.cx + r * x / rho, cam.cy + r * y / rho)


def project_points(points: np.ndarray, cam: FisheyeCamera) -> np.ndarray:
    """Vectorised :func:`project_fisheye`; out-of-view rows come back as NaN."""
    points = np.asarray(points, dtype=float)
    x, y, z = points[..., 0], points[..., 1], points[..., 2]
    rho = np.hypot(x, y)
    theta = np.arctan2(rho, z)
    with np.errstate(invalid="ignore", divide="ignore"):
        scale = np.where(rho > 0, cam.focal * theta / rho, 0.0)
    out = np.stack([cam.cx + scale * x, cam.cy + scale * y], axis=-1)
    out[theta > math.pi / 2.0] = np.nan
    return out


def _to_camera(points: np.ndarray, mount: tuple[float, float, float]) -> np.ndarray:
    # looking down: camera z is depth below the lens, image axes follow layer x/y
    return np.stack(
        [points[:, 0] - mount[0], points[:, 1] - mount[1], mount[2] - points[:, 2]], axis=-1
    )


# -- visibility ------------------------------------------------------------


def _face_samples(box, mount, grid: int) -> np.ndarray:
    """Grid-cell centres on every face of ``box`` that faces the camera."""
    x0, y0, z0, x1, y1, z1 = box
    cxm, cym, czm = mount
    u = (np.arange(grid) + 0.5) / grid
    uu, vv = np.meshgrid(u, u, indexing="ij")
    uu, vv = uu.ravel(), vv.ravel()
    faces = []
    if czm > z1:
        faces.append(np.stack([x0 + uu * (x1 - x0), y0 + vv * (y1 - y0), np.full_like(uu, z1)], -1))
    if cym < y0:
        faces.append(np.stack([x0 + uu * (x1 - x0), np.full_like(uu, y0), z0 + vv * (z1 - z0)], -1))
    if cym > y1:
        faces.append(np.stack([x0 + uu * (x1 - x0), np.full_like(uu, y1), z0 + vv * (z1 - z0)], -1))
    if cxm < x0:
        faces.append(np.stack([np.full_like(uu, x0), y0 + uu * (y1 - y0), z0 + vv * (z1 - z0)], -1))
    if cxm > x1:
        faces.append(np.stack([np.full_like(uu, x1), y0 + uu * (y1 - y0), z0 + vv * (z1 - z0)], -1))
    return np.concatenate(faces, axis=0) if faces else np.zeros((0, 3))


def _segment_hits(origin: np.ndarray, points: np.ndarray, boxes: np.ndarray, eps: float = 1e-9) -> np.ndarray:
    """``hits[n, m]``: does the open segment origin -> points[n] pass through boxes[m]?

    ``origin`` must lie outside every box.
    """
    hits = np.zeros((len(points), len(boxes)), dtype=bool)
    seg_lo = np.minimum(points, origin)
    seg_hi = np.maximum(points, origin)
    # only pairs whose bounding boxes meet can intersect
    near = np.empty((len(points), len(boxes)), dtype=bool)
    for m, (x0, y0, z0, x1, y1, z1) in enumerate(boxes):
        near[:, m] = (
            (seg_lo[:, 2] <= z1) & (seg_lo[:, 0] <= x1) & (seg_hi[:, 0] >= x0)
            & (seg_lo[:, 1] <= y1) & (seg_hi[:, 1] >= y0) & (seg_hi[:, 2] >= z0)
        )
    n_idx, m_idx = np.nonzero(near)
    if len(n_idx) == 0:
        return hits
    d = points[n_idx] - origin
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        t1 = (boxes[m_idx, :3] - origin) * inv
        t2 = (boxes[m_idx, 3:] - origin) * inv
    # fmin/fmax skip the NaN of a segment running exactly along a slab face
    enter = np.fmin(t1, t2).max(axis=1)
    leave = np.fmax(t1, t2).min(axis=1)
    hits[n_idx, m_idx] = (enter < leave - eps) & (leave > eps) & (enter < 1.0 - eps)
    return hits


def visible_annotations(
    scene: SceneSpec,
    cam: FisheyeCamera,
    grid: int = 24,
    min_visible: float = 0.0,
) -> OracleAnnotationSet:
    """Visible boxes, visible fractions and exact occlusion events for a scene.

    Objects whose visible fraction is zero, or below ``min_visible``, are
    dropped. Events are emitted for every annotated target and every object
    blocking at least one of its samples; the ratio is the blocked share of
    the target's samples and the direction points from the target's
    projected centroid to the occluder's.
    """
    mount = cam.mount(scene.layer)
    origin = np.asarray(mount)
    n = len(scene.objects)
    if n == 0:
        return OracleAnnotationSet([], [], [])
    boxes = np.asarray([o.box for o in scene.objects], dtype=float)
    samples = [_face_samples(o.box, mount, grid) for o in scene.objects]
    sizes = np.asarray([len(s) for s in samples])
    starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    owner = np.repeat(np.arange(n), sizes)
    pts = np.concatenate(samples, axis=0)
    hits = _segment_hits(origin, pts, boxes)
    hits[np.arange(len(pts)), owner] = False
    pix = project_points(_to_camera(pts, mount), cam)

    # per-object reductions over the contiguous sample blocks
    blocked_counts = np.add.reduceat(hits.astype(np.int64), starts, axis=0)  # (target, occluder)
    visible = ~hits.any(axis=1)
    n_visible = np.add.reduceat(visible.astype(np.int64), starts)
    centroids = np.add.reduceat(pix, starts, axis=0) / sizes[:, None]
    full_lo = np.minimum.reduceat(pix, starts, axis=0)
    full_hi = np.maximum.reduceat(pix, starts, axis=0)
    vis_lo = np.minimum.reduceat(np.where(visible[:, None], pix, np.inf), starts, axis=0)
    vis_hi = np.maximum.reduceat(np.where(visible[:, None], pix, -np.inf), starts, axis=0)

    objects, dropped, events, blocked = [], [], [], {}
    for i, obj in enumerate(scene.objects):
        n_i = int(sizes[i])
        fraction = float(n_visible[i]) / n_i
        bbox = None
        if n_visible[i] > 0:
            x0, y0 = np.floor(vis_lo[i])
            x1, y1 = np.ceil(vis_hi[i])
            x0, y0 = max(x0, 0.0), max(y0, 0.0)
            x1, y1 = min(max(x1, x0 + 1), cam.image_width), min(max(y1, y0 + 1), cam.image_height)
            bbox = Rect.from_corners(float(x0), float(y0), float(x1), float(y1))
        objects.append(ObjectVisibility(i, obj.item.category_id, bbox, fraction, n_i))
        if bbox is None or fraction < min_visible:
            dropped.append(i)
            continue
        radius = 0.1 * float(min(full_hi[i] - full_lo[i]))
        counts = blocked_counts[i]
        for j in np.flatnonzero(counts):
            blocked[(i, int(j))] = int(counts[j])
            dx, dy = centroids[j] - centroids[i]
            events.append(
                OcclusionEvent(
                    obj.item.category_id,
                    scene.objects[j].item.category_id,
                    float(counts[j]) / n_i,
                    direction_from_offset(float(dx), float(dy), radius),
                    Source.ORACLE,
                )
            )
    return OracleAnnotationSet(objects, events, dropped, blocked)


# -- rendering -------------------------------------------------------------


def category_color(category_id: int) -> tuple[int, int, int]:
    h = (category_id * 0.618033988749895) % 1.0
    r, g, b = colorsys.hsv_to_rgb(h, 0.75, 0.9)
    return (int(r * 255), int(g * 255), int(b * 255))


FLOOR_COLOR = (96, 96, 96)
OUTSIDE_COLOR = (0, 0, 0)


def render_scene(scene: SceneSpec, cam: FisheyeCamera) -> np.ndarray:
    """Flat-colour raster: each pixel takes the colour of the first surface its ray meets."""
    H, W = cam.image_height, cam.image_width
    mount = np.asarray(cam.mount(scene.layer))
    vv, uu = np.mgrid[0:H, 0:W]
    dx, dy = uu + 0.5 - cam.cx, vv + 0.5 - cam.cy
    r = np.hypot(dx, dy)
    theta = r / cam.focal
    in_view = theta < math.pi / 2.0
    with np.errstate(invalid="ignore", divide="ignore"):
        s = np.where(r > 0, np.sin(theta) / r, 0.0)
    # camera ray direction back in layer coordinates (z points up)
    dirs = np.stack([dx * s, dy * s, -np.cos(theta)], axis=-1).reshape(-1, 3)
    img = np.empty((H * W, 3), dtype=np.uint8)
    img[:] = OUTSIDE_COLOR
    view = in_view.ravel()
    d = dirs[view]
    # far end on the floor plane, or far away for near-horizontal rays
    t_floor = np.where(d[:, 2] < -1e-9, mount[2] / np.maximum(-d[:, 2], 1e-9), 1e6)
    ends = mount + d * t_floor[:, None]
    colors = np.empty((len(d), 3), dtype=np.uint8)
    layer = scene.layer
    on_floor = (ends[:, 0] >= 0) & (ends[:, 0] <= layer.width) & (ends[:, 1] >= 0) & (ends[:, 1] <= layer.depth)
    colors[:] = np.where(on_floor[:, None], np.asarray(FLOOR_COLOR, np.uint8), np.asarray((40, 40, 40), np.uint8))
    if scene.objects:
        boxes = np.asarray([o.box for o in scene.objects], dtype=float)
        palette = np.asarray([category_color(o.item.category_id) for o in scene.objects], dtype=np.uint8)
        chunk = 65536
        for start in range(0, len(d), chunk):
            seg_end = ends[start : start + chunk]
            dd = seg_end - mount
            with np.errstate(divide="ignore", invalid="ignore"):
                inv = 1.0 / dd[:, None, :]
                t1 = (boxes[None, :, :3] - mount) * inv
                t2 = (boxes[None, :, 3:] - mount) * inv
            tmin = np.nan_to_num(np.minimum(t1, t2), nan=-np.inf)
            tmax = np.nan_to_num(np.maximum(t1, t2), nan=np.inf)
            enter = tmin.max(axis=2)
            leave = tmax.min(axis=2)
            hit = (enter <= leave) & (leave > 0) & (enter <= 1.0)
            enter = np.where(hit, enter, np.inf)
            k = enter.argmin(axis=1)
            t = enter[np.arange(len(k)), k]
            sel = np.isfinite(t)
            idx = np.arange(start, start + len(k))[sel]
            colors[idx] = palette[k[sel]]
    img[view] = colors
    return img.reshape(H, W, 3)


# -- datasets --------------------------------------------------------------


@dataclass(frozen=True)
class SceneConfig:
    catalog: tuple[CatalogItem, ...] = field(default_factory=lambda: tuple(default_catalog()))
    layer: LayerSpec = LayerSpec()
    camera: FisheyeCamera = FisheyeCamera()
    n_scenes: int = 1
    items_per_scene: tuple[int, int] = (8, 14)
    grid: int = 24
    min_visible: float = 0.0
    camera_jitter: float = 1.0
    spacing: float = 0.5
    tall_factor: float = 1.5
    small_factor: float = 0.5

    def __post_init__(self):
        if self.n_scenes < 1:
            raise ValueError("n_scenes must be at least 1")
        lo, hi = self.items_per_scene
        if not 0 <= lo <= hi:
            raise ValueError("items_per_scene must be an ordered pair of non-negative counts")
        if not self.catalog:
            raise ValueError("catalog is empty")
        object.__setattr__(
            self, "catalog", tuple(classify_catalog(list(self.catalog), self.tall_factor, self.small_factor))
        )

    @property
    def categories(self) -> CategoryTable:
        return CategoryTable(tuple({c.category_id: c.name for c in self.catalog}.items()))

    def to_json(self) -> dict:
        cam = self.camera
        return {
            "catalog": [
                {
                    "category_id": c.category_id,
                    "name": c.name,
                    "width": c.width,
                    "depth": c.depth,
                    "height": c.height,
                    "shape": c.shape.value,
                }
                for c in self.catalog
            ],
            "layer": {
                "width": self.layer.width,
                "depth": self.layer.depth,
                "wall_margin": self.layer.wall_margin,
                "walls": list(self.layer.walls),
            },
            "camera": {
                "height": cam.height,
                "focal": cam.focal,
                "image_width": cam.image_width,
                "image_height": cam.image_height,
                "cx": cam.cx,
                "cy": cam.cy,
            },
            "thresholds": {
                "tall_factor": self.tall_factor,
                "small_factor": self.small_factor,
                "min_visible": self.min_visible,
            },
            "n_scenes": self.n_scenes,
            "items_per_scene": list(self.items_per_scene),
            "grid": self.grid,
            "camera_jitter": self.camera_jitter,
            "spacing": self.spacing,
        }

    @classmethod
    def from_json(cls, doc: dict) -> SceneConfig:
        kwargs = {}
        if "catalog" in doc:
            kwargs["catalog"] = tuple(
                CatalogItem(
                    int(c["category_id"]),
                    str(c["name"]),
                    float(c["width"]),
                    float(c["depth"]),
                    float(c["height"]),
                    Shape(c.get("shape", "CUBOID")),
                )
                for c in doc["catalog"]
            )
        if "layer" in doc:
            lay = dict(doc["layer"])
            if "walls" in lay:
                lay["walls"] = tuple(lay["walls"])
            kwargs["layer"] = LayerSpec(**lay)
        if "camera" in doc:
            kwargs["camera"] = FisheyeCamera(**doc["camera"])
        thresholds = doc.get("thresholds", {})
        for key in ("tall_factor", "small_factor", "min_visible"):
            if key in thresholds:
                kwargs[key] = float(thresholds[key])
        for key in ("n_scenes", "grid"):
            if key in doc:
                kwargs[key] = int(doc[key])
        for key in ("camera_jitter", "spacing"):
            if key in doc:
                kwargs[key] = float(doc[key])
        if "items_per_scene" in doc:
            kwargs["items_per_scene"] = tuple(int(v) for v in doc["items_per_scene"])
        return cls(**kwargs)


def simulate_scene(config: SceneConfig, seed: int, index: int) -> tuple[SceneSpec, FisheyeCamera, OracleAnnotationSet]:
    rng = substream(seed, index)
    lo, hi = config.items_per_scene
    n_items = int(rng.integers(lo, hi + 1))
    picks = [config.catalog[int(k)] for k in rng.integers(len(config.catalog), size=n_items)]
    # biggest footprints first: greedy packing fills the layer better
    picks.sort(key=lambda c: -c.footprint_area)
    scene = place_layer(picks, config.layer, rng, spacing=config.spacing, warn=False)
    layer = config.layer
    j = config.camera_jitter
    cam = replace(
        config.camera,
        position=(layer.width / 2.0 + rng.uniform(-j, j), layer.depth / 2.0 + rng.uniform(-j, j)),
    )
    return scene, cam, visible_annotations(scene, cam, config.grid, config.min_visible)


@dataclass
class SynthResult:
    dataset: Dataset
    events: list[tuple[int, OcclusionEvent]]  # (scene index, event)
    images: list[np.ndarray]
    scenes: list[SceneSpec]
    oracles: list[OracleAnnotationSet]

    def event_records(self) -> list[dict]:
        return [
            {
                "scene": k,
                "target_category": ev.target_category,
                "occluder_category": ev.occluder_category,
                "ratio": ev.ratio,
                "direction": ev.direction.value,
            }
            for k, ev in self.events
        ]


def _synth_one(args):
    config, seed, index, render = args
    scene, cam, oracle = simulate_scene(config, seed, index)
    pixels = render_scene(scene, cam) if render else None
    return scene, cam, oracle, pixels


def synth_dataset(config: SceneConfig, seed: int, workers: int = 1, render: bool = True) -> SynthResult:
    """Render ``config.n_scenes`` scenes with their visible-region annotations and oracle events."""
    jobs = [(config, seed, k, render) for k in range(config.n_scenes)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_synth_one, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        results = [_synth_one(job) for job in jobs]

    images, annotations, events, pixels_out, scenes, oracles = [], [], [], [], [], []
    next_ann = 1
    for k, (scene, cam, oracle, pixels) in enumerate(results):
        image_id = k + 1
        images.append(ImageRecord(image_id, f"scene_{k:05d}.png", cam.image_width, cam.image_height))
        for vis in oracle.annotated:
            annotations.append(Annotation(next_ann, image_id, vis.category_id, vis.bbox))
            next_ann += 1
        events.extend((k, ev) for ev in oracle.events)
        pixels_out.append(pixels)
        scenes.append(scene)
        oracles.append(oracle)
    ds = Dataset(tuple(images), tuple(annotations), config.categories)
    return SynthResult(ds, events, pixels_out, scenes, oracles)
