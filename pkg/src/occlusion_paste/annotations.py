"""COCO-style and YOLO-style bounding-box datasets.

Only the box subset of COCO is handled: ``images``, ``annotations`` and
``categories``. YOLO class indices are the rank of a category id in the
ascending category table.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .geometry import Rect

__all__ = [
    "AnnotationError",
    "ParseError",
    "SchemaError",
    "IntegrityError",
    "FormatError",
    "InvalidDatasetError",
    "Annotation",
    "ImageRecord",
    "CategoryTable",
    "Dataset",
    "ValidationReport",
    "parse_coco",
    "write_coco",
    "validate",
    "export_yolo",
    "import_yolo",
    "write_yolo_dir",
    "read_yolo_dir",
    "load_coco",
    "save_coco",
]


class AnnotationError(Exception):
    pass


class ParseError(AnnotationError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class SchemaError(AnnotationError):
    def __init__(self, field_name: str, where: str = ""):
        suffix = f" in {where}" if where else ""
        super().__init__(f"missing or malformed field {field_name!r}{suffix}")
        self.field = field_name


class IntegrityError(AnnotationError):
    pass


class FormatError(AnnotationError):
    def __init__(self, message: str, line: int, file_name: str = ""):
        where = f"{file_name}:{line}" if file_name else f"line {line}"
        super().__init__(f"{where}: {message}")
        self.line = line
        self.file_name = file_name


class InvalidDatasetError(AnnotationError):
    def __init__(self, report: ValidationReport):
        super().__init__("dataset failed validation:\n" + "\n".join(report.errors))
        self.report = report


@dataclass(frozen=True)
class Annotation:
    id: int
    image_id: int
    category_id: int
    bbox: Rect
    score: Optional[float] = None


@dataclass(frozen=True)
class ImageRecord:
    id: int
    file_name: str
    width: int
    height: int


@dataclass(frozen=True)
class CategoryTable:
    """Category ids and names, always held in ascending id order."""

    entries: tuple[tuple[int, str], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(sorted((int(i), str(n)) for i, n in self.entries)))

    @property
    def ids(self) -> list[int]:
        return [i for i, _ in self.entries]

    @property
    def names(self) -> list[str]:
        return [n for _, n in self.entries]

    def index_of(self, category_id: int) -> int:
        """YOLO class index of a category id."""
        return self.ids.index(category_id)

    def name_of(self, category_id: int) -> str:
        return dict(self.entries)[category_id]

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, category_id) -> bool:
        return category_id in self.ids


@dataclass(frozen=True)
class Dataset:
    """Immutable dataset value. Records are kept sorted by id."""

    images: tuple[ImageRecord, ...] = ()
    annotations: tuple[Annotation, ...] = ()
    categories: CategoryTable = field(default_factory=CategoryTable)

    def __post_init__(self):
        object.__setattr__(self, "images", tuple(sorted(self.images, key=lambda r: r.id)))
        object.__setattr__(self, "annotations", tuple(sorted(self.annotations, key=lambda a: a.id)))
        if not isinstance(self.categories, CategoryTable):
            object.__setattr__(self, "categories", CategoryTable(tuple(self.categories)))

    def image(self, image_id: int) -> ImageRecord:
        for rec in self.images:
            if rec.id == image_id:
                return rec
        raise KeyError(image_id)

    def annotations_by_image(self) -> dict[int, list[Annotation]]:
        out: dict[int, list[Annotation]] = {rec.id: [] for rec in self.images}
        for ann in self.annotations:
            out.setdefault(ann.image_id, []).append(ann)
        return out

    def next_image_id(self) -> int:
        return max((r.id for r in self.images), default=0) + 1

    def next_annotation_id(self) -> int:
        return max((a.id for a in self.annotations), default=0) + 1


@dataclass
class ValidationReport:
    errors: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors

    def __bool__(self) -> bool:
        return bool(self.errors or self.warnings)


# -- COCO ------------------------------------------------------------------


def _require(record: dict, key: str, where: str):
    if not isinstance(record, dict) or key not in record:
        raise SchemaError(key, where)
    return record[key]


def _number(value, key: str, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SchemaError(key, where)
    return value


def parse_coco(data: bytes | str) -> Dataset:
    """Load a COCO-style document. Unknown keys are ignored."""
    text = data.decode("utf-8") if isinstance(data, (bytes, bytearray)) else data
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, len(text[: exc.pos].encode("utf-8"))) from None
    if not isinstance(doc, dict):
        raise SchemaError("images", "top level")
    raw_images = _require(doc, "images", "top level")
    raw_anns = _require(doc, "annotations", "top level")
    raw_cats = _require(doc, "categories", "top level")
    for key, value in (("images", raw_images), ("annotations", raw_anns), ("categories", raw_cats)):
        if not isinstance(value, list):
            raise SchemaError(key, "top level")

    images = []
    for k, rec in enumerate(raw_images):
        where = f"images[{k}]"
        images.append(
            ImageRecord(
                id=int(_number(_require(rec, "id", where), "id", where)),
                file_name=str(_require(rec, "file_name", where)),
                width=int(_number(_require(rec, "width", where), "width", where)),
                height=int(_number(_require(rec, "height", where), "height", where)),
            )
        )
    categories = []
    for k, rec in enumerate(raw_cats):
        where = f"categories[{k}]"
        categories.append(
            (int(_number(_require(rec, "id", where), "id", where)), str(_require(rec, "name", where)))
        )

    image_ids = {r.id for r in images}
    category_ids = {c for c, _ in categories}
    annotations = []
    for k, rec in enumerate(raw_anns):
        where = f"annotations[{k}]"
        ann_id = int(_number(_require(rec, "id", where), "id", where))
        image_id = int(_number(_require(rec, "image_id", where), "image_id", where))
        category_id = int(_number(_require(rec, "category_id", where), "category_id", where))
        bbox = _require(rec, "bbox", where)
        if not isinstance(bbox, list) or len(bbox) != 4:
            raise SchemaError("bbox", where)
        bbox = [_number(v, "bbox", where) for v in bbox]
        score = rec.get("score")
        if score is not None:
            score = float(_number(score, "score", where))
        if image_id not in image_ids:
            raise IntegrityError(f"annotation {ann_id} references unknown image_id {image_id}")
        if category_id not in category_ids:
            raise IntegrityError(f"annotation {ann_id} references unknown category_id {category_id}")
        annotations.append(Annotation(ann_id, image_id, category_id, Rect(*bbox), score))

    return Dataset(tuple(images), tuple(annotations), CategoryTable(tuple(categories)))


def _num_out(v: float):
    # integral floats serialize as ints so round trips stay exact and compact
    if isinstance(v, float) and v.is_integer():
        return int(v)
    return v


def write_coco(ds: Dataset) -> bytes:
    """Deterministic COCO serialization; refuses datasets with validation errors."""
    report = validate(ds)
    if not report.ok:
        raise InvalidDatasetError(report)
    doc = {
        "annotations": [
            {
                "bbox": [_num_out(v) for v in a.bbox.as_list()],
                "category_id": a.category_id,
                "id": a.id,
                "image_id": a.image_id,
                **({"score": a.score} if a.score is not None else {}),
            }
            for a in sorted(ds.annotations, key=lambda a: a.id)
        ],
        "categories": [{"id": i, "name": n} for i, n in ds.categories.entries],
        "images": [
            {"file_name": r.file_name, "height": r.height, "id": r.id, "width": r.width}
            for r in sorted(ds.images, key=lambda r: r.id)
        ],
    }
    return (json.dumps(doc, sort_keys=True, indent=1, ensure_ascii=False) + "\n").encode("utf-8")


def load_coco(path: str | Path) -> Dataset:
    return parse_coco(Path(path).read_bytes())


def save_coco(ds: Dataset, path: str | Path) -> None:
    Path(path).write_bytes(write_coco(ds))


def validate(ds: Dataset) -> ValidationReport:
    """Collect referential and geometric problems without modifying ``ds``."""
    report = ValidationReport()
    seen_images: dict[int, ImageRecord] = {}
    for rec in ds.images:
        if rec.id in seen_images:
            report.errors.append(f"duplicate image id {rec.id}")
        seen_images[rec.id] = rec
        if not (rec.width > 0 and rec.height > 0):
            report.errors.append(f"image {rec.id} has non-positive extent {rec.width}x{rec.height}")

    seen_cats = set()
    names = set()
    for cid, name in ds.categories.entries:
        if cid in seen_cats:
            report.errors.append(f"duplicate category id {cid}")
        if name in names:
            report.errors.append(f"duplicate category name {name!r}")
        seen_cats.add(cid)
        names.add(name)

    seen_anns = set()
    used_images = set()
    for ann in ds.annotations:
        if ann.id in seen_anns:
            report.errors.append(f"duplicate annotation id {ann.id}")
        seen_anns.add(ann.id)
        if ann.category_id not in seen_cats:
            report.errors.append(f"annotation {ann.id} references unknown category_id {ann.category_id}")
        rec = seen_images.get(ann.image_id)
        if rec is None:
            report.errors.append(f"annotation {ann.id} references unknown image_id {ann.image_id}")
            continue
        used_images.add(ann.image_id)
        if not ann.bbox.is_valid():
            report.errors.append(f"annotation {ann.id} has non-positive or non-finite bbox {ann.bbox.as_list()}")
            continue
        if ann.score is not None and not 0.0 <= ann.score <= 1.0:
            report.errors.append(f"annotation {ann.id} has score {ann.score} outside [0, 1]")
        frame = Rect(0, 0, rec.width, rec.height)
        if not frame.contains(ann.bbox):
            if ann.bbox.intersection(frame) is None:
                report.errors.append(f"annotation {ann.id} lies entirely outside image {rec.id}")
            else:
                report.warnings.append(f"annotation {ann.id} extends outside image {rec.id}")

    for rec in ds.images:
        if rec.id not in used_images:
            report.warnings.append(f"image {rec.id} has no annotations")
    return report


# -- YOLO ------------------------------------------------------------------


def export_yolo(ds: Dataset, warnings: Optional[list[str]] = None) -> list[tuple[str, list[str]]]:
    """One ``(file_name, lines)`` record per image, in image-id order.

    Boxes reaching outside the image are clipped first; a note is appended
    to ``warnings`` when given.
    """
    report = validate(ds)
    if not report.ok:
        raise InvalidDatasetError(report)
    by_image = ds.annotations_by_image()
    out = []
    for rec in ds.images:
        lines = []
        for ann in by_image.get(rec.id, []):
            box = ann.bbox
            clipped = box.clip(rec.width, rec.height)
            if clipped != box:
                if warnings is not None:
                    warnings.append(f"annotation {ann.id} clipped to image {rec.id}")
                box = clipped
            cx, cy = box.center
            lines.append(
                f"{ds.categories.index_of(ann.category_id)} "
                f"{cx / rec.width:.6f} {cy / rec.height:.6f} "
                f"{box.w / rec.width:.6f} {box.h / rec.height:.6f}"
            )
        out.append((rec.file_name, lines))
    return out


def import_yolo(
    records: Sequence[tuple[str, Sequence[str]]],
    images: Iterable[ImageRecord],
    categories: CategoryTable,
) -> Dataset:
    images = tuple(images)
    by_name = {rec.file_name: rec for rec in images}
    ids = categories.ids
    annotations = []
    next_id = 1
    for file_name, lines in records:
        if file_name not in by_name:
            raise IntegrityError(f"YOLO record for unknown image {file_name!r}")
        rec = by_name[file_name]
        for lineno, line in enumerate(lines, start=1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 5:
                raise FormatError(f"expected 5 fields, got {len(parts)}", lineno, file_name)
            try:
                cls = int(parts[0])
                cx, cy, w, h = (float(p) for p in parts[1:])
            except ValueError:
                raise FormatError(f"unparseable line {line!r}", lineno, file_name) from None
            if not 0 <= cls < len(ids):
                raise FormatError(f"class index {cls} out of range for {len(ids)} categories", lineno, file_name)
            if not all(0.0 <= v <= 1.0 and math.isfinite(v) for v in (cx, cy, w, h)):
                raise FormatError(f"coordinate outside [0, 1] in {line!r}", lineno, file_name)
            bbox = Rect.from_center(cx * rec.width, cy * rec.height, w * rec.width, h * rec.height)
            annotations.append(Annotation(next_id, rec.id, ids[cls], bbox))
            next_id += 1
    return Dataset(images, tuple(annotations), categories)


def _label_name(file_name: str) -> str:
    return Path(file_name).with_suffix(".txt").name


def write_yolo_dir(ds: Dataset, out_dir: str | Path, warnings: Optional[list[str]] = None) -> list[Path]:
    """Write one label file per image plus ``classes.txt``; returns written paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for file_name, lines in export_yolo(ds, warnings):
        path = out_dir / _label_name(file_name)
        path.write_text("".join(line + "\n" for line in lines))
        written.append(path)
    classes = out_dir / "classes.txt"
    classes.write_text("".join(name + "\n" for name in ds.categories.names))
    written.append(classes)
    return written


def read_yolo_dir(label_dir: str | Path, reference: Dataset) -> Dataset:
    """Read labels for every image of ``reference`` (images and categories come from it)."""
    label_dir = Path(label_dir)
    records = []
    for rec in reference.images:
        path = label_dir / _label_name(rec.file_name)
        lines = path.read_text().splitlines() if path.exists() else []
        records.append((rec.file_name, lines))
    return import_yolo(records, reference.images, reference.categories)
