"""Occlusion-driven copy-paste augmentation.

Rectangular donor crops (background included) are pasted over objects of a
new category so that each paste reproduces an (occlusion ratio, direction)
cell drawn from that category's occlusion histogram. Annotations are then
shrunk to the part of each box that is still visible.
"""

from __future__ import annotations

import json
import logging
import math
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Optional, Sequence

import numpy as np

from .annotations import Annotation, Dataset, ImageRecord, IntegrityError, validate
from .geometry import Rect, bounding_rect, rect_difference, visible_region
from .imaging import load_rgb, resize_nearest, shift_hue
from .occlusion import (
    Direction,
    OcclusionHistogram,
    OcclusionSample,
    occlusion_direction,
    overlap_ratio,
    sample_point,
)
from .streams import substream

log = logging.getLogger(__name__)

__all__ = [
    "DonorCrop",
    "DonorPool",
    "Constraints",
    "PasteOp",
    "AugmentPlan",
    "AugmentResult",
    "EmptyPoolError",
    "InfeasibleAugmentationError",
    "RATIO_TOLERANCE",
    "build_donor_pool",
    "clip_visible_bbox",
    "plan_paste",
    "apply_plan",
    "geometric_photometric",
    "augment_dataset",
    "write_manifest",
]

# slack allowed between an achieved ratio and the edges of its sampled bin
RATIO_TOLERANCE = 0.05


class EmptyPoolError(ValueError):
    pass


class InfeasibleAugmentationError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class DonorCrop:
    annotation_id: int
    image_id: int
    rect: Rect
    category_id: int
    pixels: np.ndarray

    def __post_init__(self):
        if self.pixels.shape[:2] != (int(self.rect.h), int(self.rect.w)):
            raise ValueError(f"payload {self.pixels.shape[:2]} does not match rect {self.rect}")


@dataclass(frozen=True)
class DonorPool:
    crops: tuple[DonorCrop, ...]

    def __len__(self) -> int:
        return len(self.crops)

    def by_category(self) -> dict[int, list[DonorCrop]]:
        out: dict[int, list[DonorCrop]] = {}
        for crop in self.crops:
            out.setdefault(crop.category_id, []).append(crop)
        return out

    def get(self, annotation_id: int) -> DonorCrop:
        for crop in self.crops:
            if crop.annotation_id == annotation_id:
                return crop
        raise KeyError(annotation_id)


@dataclass(frozen=True)
class Constraints:
    max_overlap: float = 0.3  # share of any other existing box a paste may cover
    min_visible: float = 0.1  # share of the target that must stay visible
    scale_range: tuple[float, float] = (0.5, 2.0)
    max_attempts: int = 50

    def __post_init__(self):
        if not 0.0 <= self.max_overlap <= 1.0:
            raise ValueError("max_overlap must lie in [0, 1]")
        if not 0.0 < self.min_visible < 1.0:
            raise ValueError("min_visible must lie in (0, 1)")
        lo, hi = self.scale_range
        if not 0 < lo <= hi:
            raise ValueError("scale_range must be positive and ordered")
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be positive")

    def to_json(self) -> dict:
        return {
            "max_overlap": self.max_overlap,
            "min_visible": self.min_visible,
            "scale_range": list(self.scale_range),
            "max_attempts": self.max_attempts,
        }


@dataclass(frozen=True)
class PasteOp:
    donor: DonorCrop
    placement: Rect
    z: int
    target_id: int
    sample: OcclusionSample
    achieved_ratio: float
    achieved_direction: Direction
    visible_fraction: float

    def to_json(self) -> dict:
        return {
            "donor_annotation_id": self.donor.annotation_id,
            "donor_category_id": self.donor.category_id,
            "target_annotation_id": self.target_id,
            "placement": self.placement.as_list(),
            "z": self.z,
            "achieved_ratio": self.achieved_ratio,
            "achieved_direction": self.achieved_direction.value,
            "visible_fraction": self.visible_fraction,
            "sample": {
                "ratio_lo": self.sample.ratio_lo,
                "ratio_hi": self.sample.ratio_hi,
                "direction": self.sample.direction.value,
            },
        }


def build_donor_pool(
    ds: Dataset,
    image_root: str | Path | None = None,
    categories: Optional[Iterable[int]] = None,
    images: Optional[Mapping[int, np.ndarray]] = None,
) -> DonorPool:
    """Cut one crop per annotation (optionally only some categories).

    Pixels come from ``images`` (keyed by image id) when given, otherwise
    from ``image_root / file_name``. Boxes are snapped outward to whole
    pixels and clipped to the image.
    """
    wanted = None if categories is None else set(categories)
    by_image = ds.annotations_by_image()
    crops = []
    for rec in ds.images:
        anns = [a for a in by_image.get(rec.id, []) if wanted is None or a.category_id in wanted]
        if not anns:
            continue
        if images is not None and rec.id in images:
            pixels = images[rec.id]
        else:
            if image_root is None:
                raise OSError(f"no pixels for image {rec.id} and no image root given")
            pixels = load_rgb(Path(image_root) / rec.file_name)
        if pixels.shape[:2] != (rec.height, rec.width):
            raise IntegrityError(
                f"image {rec.file_name} is {pixels.shape[1]}x{pixels.shape[0]}, record says {rec.width}x{rec.height}"
            )
        for ann in anns:
            x0, y0 = max(0, math.floor(ann.bbox.x)), max(0, math.floor(ann.bbox.y))
            x1, y1 = min(rec.width, math.ceil(ann.bbox.x2)), min(rec.height, math.ceil(ann.bbox.y2))
            if x1 <= x0 or y1 <= y0:
                continue
            crops.append(
                DonorCrop(ann.id, rec.id, Rect(x0, y0, x1 - x0, y1 - y0), ann.category_id, pixels[y0:y1, x0:x1].copy())
            )
    if not crops:
        raise EmptyPoolError("no donor crops after filtering")
    crops.sort(key=lambda c: (c.image_id, c.annotation_id))
    return DonorPool(tuple(crops))


def clip_visible_bbox(target: Rect, occluder: Rect) -> tuple[Optional[Rect], float]:
    """Box around the part of ``target`` not covered by ``occluder``, and its area share.

    The share is measured on the true uncovered region, which need not be a
    rectangle; the box may therefore keep its full size while the share drops.
    """
    if not target.area > 0:
        raise ValueError(f"degenerate target {target}")
    pieces = rect_difference(target, occluder)
    if not pieces:
        return None, 0.0
    return bounding_rect(pieces), (target.area - target.intersection_area(occluder)) / target.area


# -- planning --------------------------------------------------------------


def _ratio_at(target: Rect, cx: float, cy: float, pw: float, ph: float) -> float:
    ox = min(target.x2, cx + pw / 2.0) - max(target.x, cx - pw / 2.0)
    oy = min(target.y2, cy + ph / 2.0) - max(target.y, cy - ph / 2.0)
    if ox <= 0 or oy <= 0:
        return 0.0
    return ox * oy / target.area


def _solve_offset(target: Rect, u: tuple[float, float], pw: float, ph: float, ratio: float) -> Optional[float]:
    """Distance along ``u`` from the target centre giving the wanted overlap ratio.

    The ratio never increases as the paste slides outward, so bisection works.
    """
    tx, ty = target.center
    f = lambda t: _ratio_at(target, tx + t * u[0], ty + t * u[1], pw, ph)
    if f(0.0) < ratio:
        return None
    lo, hi = 0.0, target.w + target.h + pw + ph
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if f(mid) >= ratio:
            lo = mid
        else:
            hi = mid
    return lo


def _solve_center_scale(target: Rect, donor: Rect, ratio: float, scale_range) -> float:
    f = lambda s: min(s * donor.w, target.w) * min(s * donor.h, target.h) / target.area
    lo, hi = scale_range
    if f(lo) >= ratio:
        return lo
    if f(hi) <= ratio:
        return hi
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if f(mid) < ratio:
            lo = mid
        else:
            hi = mid
    return hi


def _violations(
    target: Annotation,
    placement: Rect,
    sample: OcclusionSample,
    others: Sequence[Rect],
    c: Constraints,
    image_size: tuple[int, int],
    guarded: Sequence[tuple[Rect, Sequence[Rect]]],
) -> tuple[list[str], float, Direction, float]:
    W, H = image_size
    problems = []
    if not Rect(0, 0, W, H).contains(placement):
        problems.append("bounds")
    ratio = overlap_ratio(target.bbox, placement)
    if not sample.ratio_lo - RATIO_TOLERANCE <= ratio <= sample.ratio_hi + RATIO_TOLERANCE:
        problems.append("ratio")
    direction = occlusion_direction(target.bbox, placement)
    if direction is not sample.direction:
        problems.append("direction")
    _, visible = clip_visible_bbox(target.bbox, placement)
    if visible < c.min_visible:
        problems.append("min_visible")
    if any(placement.intersection_area(b) / b.area > c.max_overlap for b in others):
        problems.append("max_overlap")
    # earlier pastes already cover parts of some boxes; nobody may vanish
    for box, covers in guarded:
        if visible_region(box, [*covers, placement])[1] < c.min_visible:
            problems.append("cumulative_visibility")
            break
    return problems, ratio, direction, visible


def plan_paste(
    base_annotations: Sequence[Annotation],
    target: Annotation,
    sample: OcclusionSample,
    pool: DonorPool,
    c: Constraints,
    rng: np.random.Generator,
    image_size: tuple[int, int],
    prior: Sequence[PasteOp] = (),
    stats: Optional[Counter] = None,
) -> Optional[PasteOp]:
    """Rejection-sample one paste that realises ``sample`` on ``target``.

    Each attempt draws a donor and a scale, slides the scaled crop out from
    the target centre along the sampled direction until the overlap ratio
    hits a value drawn from the sampled bin, jitters it sideways and snaps
    it to whole pixels. The first placement passing every constraint wins;
    None means all ``c.max_attempts`` attempts were rejected. ``prior``
    holds pastes already planned for the same image, lowest z first.
    ``stats`` collects rejection reasons.
    """
    if not any(a.id == target.id for a in base_annotations):
        raise ValueError(f"target {target.id} is not among the base annotations")
    if not len(pool):
        raise EmptyPoolError("donor pool is empty")
    stats = stats if stats is not None else Counter()
    prior_rects = [op.placement for op in prior]
    others = [a.bbox for a in base_annotations if a.id != target.id] + prior_rects
    guarded = [(a.bbox, prior_rects) for a in base_annotations]
    guarded += [(op.placement, prior_rects[k + 1 :]) for k, op in enumerate(prior)]

    hi_reachable = min(sample.ratio_hi, 1.0 - c.min_visible)
    if sample.ratio_lo - RATIO_TOLERANCE > hi_reachable:
        stats["min_visible"] += c.max_attempts
        return None
    lo_t = max(sample.ratio_lo, 0.0)
    tb = target.bbox
    tx, ty = tb.center
    radius = 0.1 * min(tb.w, tb.h)

    for _ in range(c.max_attempts):
        donor = pool.crops[int(rng.integers(len(pool)))]
        wanted = rng.uniform(lo_t, max(lo_t, hi_reachable))
        if sample.direction is Direction.CENTER:
            scale = _solve_center_scale(tb, donor.rect, wanted, c.scale_range)
            pw, ph = max(1, round(donor.rect.w * scale)), max(1, round(donor.rect.h * scale))
            ang = rng.uniform(0.0, 2.0 * math.pi)
            rad = 0.5 * radius * math.sqrt(rng.random())
            cx, cy = tx + rad * math.cos(ang), ty + rad * math.sin(ang)
        else:
            scale = rng.uniform(*c.scale_range)
            pw, ph = max(1, round(donor.rect.w * scale)), max(1, round(donor.rect.h * scale))
            u = sample.direction.unit
            t = _solve_offset(tb, u, pw, ph, wanted)
            if t is None:
                stats["ratio"] += 1
                continue
            t = max(t, 1.05 * radius + 1.0)
            side = rng.uniform(-1.0, 1.0) * 0.25 * t * math.tan(math.pi / 8.0)
            cx, cy = tx + t * u[0] - side * u[1], ty + t * u[1] + side * u[0]
        placement = Rect(float(round(cx - pw / 2.0)), float(round(cy - ph / 2.0)), float(pw), float(ph))
        problems, ratio, direction, visible = _violations(target, placement, sample, others, c, image_size, guarded)
        if problems:
            stats.update(problems)
            continue
        return PasteOp(donor, placement, len(prior), target.id, sample, ratio, direction, visible)
    return None


# -- applying --------------------------------------------------------------


@dataclass(frozen=True)
class AugmentPlan:
    image: ImageRecord
    base_annotations: tuple[Annotation, ...]
    pastes: tuple[PasteOp, ...] = ()
    first_annotation_id: int = 1

    def output_annotations(self, image_id: Optional[int] = None) -> list[Annotation]:
        """Base boxes shrunk to what the pastes leave visible, then one box per paste.

        Everything keeps ``image_id`` (default: the base image's id). A paste
        is itself hidden by pastes with higher z.
        """
        image_id = self.image.id if image_id is None else image_id
        placements = [op.placement for op in self.pastes]
        out = []
        for ann in self.base_annotations:
            box, _ = visible_region(ann.bbox, placements)
            if box is None:
                log.warning("annotation %d fully covered; dropped", ann.id)
                continue
            out.append(Annotation(ann.id, image_id, ann.category_id, box))
        next_id = self.first_annotation_id
        for k, op in enumerate(self.pastes):
            box, _ = visible_region(op.placement, placements[k + 1 :])
            if box is None:
                continue
            out.append(Annotation(next_id, image_id, op.donor.category_id, box))
            next_id += 1
        return out


def apply_plan(pixels: np.ndarray, plan: AugmentPlan, image_id: Optional[int] = None):
    """Composite the pastes in z order; returns ``(pixels, annotations)``.

    Donor crops are nearest-neighbour scaled to their placement and written
    verbatim, background and all.
    """
    rec = plan.image
    if pixels.shape[:2] != (rec.height, rec.width):
        raise IntegrityError(f"pixels are {pixels.shape[1]}x{pixels.shape[0]}, image {rec.id} is {rec.width}x{rec.height}")
    out = pixels.copy()
    for op in sorted(plan.pastes, key=lambda op: op.z):
        p = op.placement
        x0, y0, w, h = int(p.x), int(p.y), int(p.w), int(p.h)
        out[y0 : y0 + h, x0 : x0 + w] = resize_nearest(op.donor.pixels, w, h)
    return out, plan.output_annotations(image_id)


def geometric_photometric(
    pixels: np.ndarray,
    annotations: Sequence[Annotation],
    hflip: bool = False,
    scale: float = 1.0,
    translate: tuple[float, float] = (0.0, 0.0),
    hue_shift: float = 0.0,
    warnings: Optional[list[str]] = None,
):
    """Flip, scale about the top-left corner, translate, then rotate hue.

    The canvas keeps its size; uncovered pixels become black and boxes are
    clipped to the frame after each geometric step. Boxes pushed fully out
    of frame are dropped and noted in ``warnings``.
    """
    if not scale > 0:
        raise ValueError("scale must be positive")
    H, W = pixels.shape[:2]
    img = pixels
    boxes = {a.id: a.bbox for a in annotations}

    def clip_all():
        for k in list(boxes):
            if boxes[k] is None:
                continue
            boxes[k] = boxes[k].clip(W, H)

    if hflip:
        img = img[:, ::-1]
        boxes = {k: Rect(W - b.x - b.w, b.y, b.w, b.h) for k, b in boxes.items()}
    if scale != 1.0:
        rows = np.floor((np.arange(H) + 0.5) / scale).astype(np.intp)
        cols = np.floor((np.arange(W) + 0.5) / scale).astype(np.intp)
        canvas = np.zeros_like(img)
        rv, cv = rows < H, cols < W
        canvas[np.ix_(rv, cv)] = img[np.ix_(rows[rv], cols[cv])]
        img = canvas
        boxes = {k: b.scaled(scale) for k, b in boxes.items()}
        clip_all()
    dx, dy = translate
    if dx or dy:
        dx_i, dy_i = int(round(dx)), int(round(dy))
        canvas = np.zeros_like(img)
        src = img[max(0, -dy_i) : H - max(0, dy_i), max(0, -dx_i) : W - max(0, dx_i)]
        canvas[max(0, dy_i) : max(0, dy_i) + src.shape[0], max(0, dx_i) : max(0, dx_i) + src.shape[1]] = src
        img = canvas
        boxes = {k: (None if b is None else b.translated(dx_i, dy_i)) for k, b in boxes.items()}
        clip_all()
    if hue_shift:
        img = shift_hue(np.ascontiguousarray(img), hue_shift)

    out = []
    for ann in annotations:
        box = boxes[ann.id]
        if box is None:
            if warnings is not None:
                warnings.append(f"annotation {ann.id} left the frame; dropped")
            continue
        out.append(Annotation(ann.id, ann.image_id, ann.category_id, box, ann.score))
    return np.ascontiguousarray(img), out


# -- dataset level ---------------------------------------------------------


@dataclass
class AugmentResult:
    dataset: Dataset
    images: list[tuple[ImageRecord, np.ndarray]]
    manifest: list[dict]
    plans: list[AugmentPlan] = field(default_factory=list)


@dataclass(frozen=True, eq=False)
class _Context:
    ds: Dataset
    new_category: int
    hist: OcclusionHistogram
    constraints: Constraints
    seed: int
    pool: DonorPool
    bases: tuple[int, ...]
    slot_budget: int
    resamples: int


def _plan_slot(ctx: _Context, k: int) -> AugmentPlan:
    rng = substream(ctx.seed, k)
    rec = ctx.ds.image(ctx.bases[k % len(ctx.bases)])
    base = [a for a in ctx.ds.annotations if a.image_id == rec.id]
    targets = [a for a in base if a.category_id == ctx.new_category]
    stats: Counter = Counter()
    for _ in range(ctx.slot_budget):
        pastes: list[PasteOp] = []
        for target in targets:
            for _ in range(ctx.resamples):
                sample = sample_point(ctx.hist, rng)
                op = plan_paste(base, target, sample, ctx.pool, ctx.constraints, rng, (rec.width, rec.height), pastes, stats)
                if op is not None:
                    pastes.append(op)
                    break
        if pastes:
            return AugmentPlan(rec, tuple(base), tuple(pastes))
    worst = ", ".join(f"{name}={n}" for name, n in stats.most_common())
    raise InfeasibleAugmentationError(
        f"output image {k} (base image {rec.id}): every paste was rejected; rejections by constraint: {worst}"
    )


_WORKER_CTX: Optional[_Context] = None


def _init_worker(ctx: _Context) -> None:
    global _WORKER_CTX
    _WORKER_CTX = ctx


def _plan_slot_in_worker(k: int) -> AugmentPlan:
    return _plan_slot(_WORKER_CTX, k)


def augment_dataset(
    ds: Dataset,
    new_category: int,
    count: int,
    hist: OcclusionHistogram,
    c: Constraints,
    seed: int,
    *,
    pool: Optional[DonorPool] = None,
    images: Optional[Mapping[int, np.ndarray]] = None,
    image_root: str | Path | None = None,
    workers: int = 1,
    slot_budget: int = 20,
    resamples: int = 10,
    file_pattern: str = "aug_{:05d}.png",
) -> AugmentResult:
    """Create ``count`` occluded variants of the images holding ``new_category``.

    Output image ``k`` is built from base image ``k mod n`` (bases in id
    order) with a random stream keyed by ``(seed, k)``; every new-category
    object in it receives at most one paste. Raises
    :class:`InfeasibleAugmentationError` when a slot stays empty after
    ``slot_budget`` rounds of fresh samples.
    """
    if count < 0:
        raise ValueError("count must be non-negative")
    if count == 0:
        return AugmentResult(ds, [], [])
    bases = tuple(sorted({a.image_id for a in ds.annotations if a.category_id == new_category}))
    if not bases:
        raise ValueError(f"dataset has no annotation of category {new_category}")
    if hist.empty:
        raise ValueError("occlusion histogram is empty")

    def pixels_of(rec: ImageRecord) -> np.ndarray:
        if images is not None and rec.id in images:
            return images[rec.id]
        if image_root is None:
            raise OSError(f"no pixels for image {rec.id} and no image root given")
        return load_rgb(Path(image_root) / rec.file_name)

    if pool is None:
        pool = build_donor_pool(ds, image_root, images=images)
    ctx = _Context(ds, new_category, hist, c, seed, pool, bases, slot_budget, resamples)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker, initargs=(ctx,)) as ex:
            plans = list(ex.map(_plan_slot_in_worker, range(count)))
    else:
        plans = [_plan_slot(ctx, k) for k in range(count)]

    new_images, out_images, new_anns, manifest = [], [], [], []
    next_image = ds.next_image_id()
    next_ann = ds.next_annotation_id()
    base_pixels: dict[int, np.ndarray] = {}
    for k, plan in enumerate(plans):
        rec = ImageRecord(next_image + k, file_pattern.format(k), plan.image.width, plan.image.height)
        if plan.image.id not in base_pixels:
            base_pixels[plan.image.id] = pixels_of(plan.image)
        pixels, anns = apply_plan(base_pixels[plan.image.id], plan, image_id=rec.id)
        for ann in anns:
            new_anns.append(Annotation(next_ann, rec.id, ann.category_id, ann.bbox))
            next_ann += 1
        new_images.append(rec)
        out_images.append((rec, pixels))
        manifest.append(
            {
                "output_file": rec.file_name,
                "output_image_id": rec.id,
                "base_image_id": plan.image.id,
                "pastes": [op.to_json() for op in plan.pastes],
                "seed_info": {"seed": seed, "index": k, "generator": "philox"},
            }
        )
    out = Dataset(ds.images + tuple(new_images), ds.annotations + tuple(new_anns), ds.categories)
    report = validate(out)
    if not report.ok:
        raise IntegrityError("augmented dataset failed validation:\n" + "\n".join(report.errors))
    return AugmentResult(out, out_images, manifest, plans)


def write_manifest(records: Sequence[dict], path: str | Path) -> None:
    Path(path).write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in records))
