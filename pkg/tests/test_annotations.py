import json

import numpy as np
import pytest

from _factories import random_dataset
from occlusion_paste.annotations import (
    Annotation,
    CategoryTable,
    Dataset,
    FormatError,
    ImageRecord,
    IntegrityError,
    InvalidDatasetError,
    ParseError,
    SchemaError,
    export_yolo,
    import_yolo,
    parse_coco,
    read_yolo_dir,
    validate,
    write_coco,
    write_yolo_dir,
)
from occlusion_paste.geometry import Rect

MINIMAL = {
    "images": [{"id": 1, "file_name": "a.png", "width": 100, "height": 200}],
    "annotations": [{"id": 1, "image_id": 1, "category_id": 3, "bbox": [10, 20, 30, 40]}],
    "categories": [{"id": 3, "name": "can"}],
}


def minimal():
    return parse_coco(json.dumps(MINIMAL))


def test_parse_minimal():
    ds = minimal()
    assert (len(ds.images), len(ds.annotations), len(ds.categories)) == (1, 1, 1)
    assert ds.annotations[0].bbox == Rect(10, 20, 30, 40)
    assert ds.annotations[0].score is None


def test_parse_ignores_unknown_keys_and_accepts_no_annotations():
    doc = dict(MINIMAL, annotations=[], info={"x": 1}, licenses=[])
    ds = parse_coco(json.dumps(doc).encode())
    assert ds.annotations == ()
    assert validate(ds).ok


def test_parse_errors():
    with pytest.raises(ParseError) as exc:
        parse_coco(b'{"images": [1,}')
    assert exc.value.offset == 14
    doc = json.loads(json.dumps(MINIMAL))
    del doc["annotations"][0]["bbox"]
    with pytest.raises(SchemaError, match="bbox"):
        parse_coco(json.dumps(doc))
    doc = json.loads(json.dumps(MINIMAL))
    doc["annotations"][0]["image_id"] = 42
    with pytest.raises(IntegrityError, match="42"):
        parse_coco(json.dumps(doc))


def test_write_is_deterministic_and_sorted():
    ds = Dataset(
        (ImageRecord(1, "a.png", 100, 100),),
        (Annotation(9, 1, 1, Rect(0, 0, 5, 5)), Annotation(2, 1, 1, Rect(1, 1, 5, 5))),
        CategoryTable(((1, "x"),)),
    )
    out = write_coco(ds)
    assert out == write_coco(ds)
    assert [a["id"] for a in json.loads(out)["annotations"]] == [2, 9]
    assert parse_coco(out) == ds
    assert parse_coco(write_coco(minimal())) == minimal()


def test_write_refuses_invalid():
    ds = Dataset((ImageRecord(1, "a.png", 10, 10),), (Annotation(1, 5, 1, Rect(0, 0, 1, 1)),), CategoryTable(((1, "x"),)))
    with pytest.raises(InvalidDatasetError) as exc:
        write_coco(ds)
    assert exc.value.report.errors


def test_validate_examples():
    assert not validate(minimal())
    base = minimal()
    dup = Dataset(base.images, base.annotations + (Annotation(1, 1, 3, Rect(0, 0, 5, 5)),), base.categories)
    rep = validate(dup)
    assert len(rep.errors) == 1 and "1" in rep.errors[0]
    wide = Dataset(base.images, (Annotation(1, 1, 3, Rect(80, 0, 25, 10)),), base.categories)
    rep = validate(wide)
    assert rep.errors == [] and len(rep.warnings) == 1


def test_export_yolo_examples():
    assert export_yolo(minimal()) == [("a.png", ["0 0.250000 0.200000 0.300000 0.200000"])]
    full = Dataset(minimal().images, (Annotation(1, 1, 3, Rect(0, 0, 100, 200)),), minimal().categories)
    assert export_yolo(full)[0][1] == ["0 0.500000 0.500000 1.000000 1.000000"]


def test_export_clips_with_warning():
    base = minimal()
    ds = Dataset(base.images, (Annotation(1, 1, 3, Rect(90, 0, 20, 10)),), base.categories)
    warnings = []
    lines = export_yolo(ds, warnings)[0][1]
    assert len(warnings) == 1
    assert lines == ["0 0.950000 0.025000 0.100000 0.050000"]


def test_class_index_is_rank_of_category_id():
    ds = Dataset(
        (ImageRecord(1, "a.png", 10, 10),),
        (Annotation(1, 1, 40, Rect(0, 0, 2, 2)), Annotation(2, 1, 7, Rect(0, 0, 2, 2))),
        CategoryTable(((40, "b"), (7, "a"), (12, "c"))),
    )
    assert [line.split()[0] for line in export_yolo(ds)[0][1]] == ["2", "0"]


def test_import_yolo_examples():
    base = minimal()
    ds = import_yolo([("a.png", ["0 0.250000 0.200000 0.300000 0.200000"])], base.images, base.categories)
    (ann,) = ds.annotations
    assert ann.id == 1 and ann.category_id == 3
    for got, want in zip(ann.bbox.as_list(), [10, 20, 30, 40]):
        assert abs(got - want) <= 0.05
    empty = import_yolo([("a.png", [])], base.images, base.categories)
    assert len(empty.images) == 1 and empty.annotations == ()
    cats = CategoryTable(((1, "a"), (2, "b"), (3, "c")))
    with pytest.raises(FormatError) as exc:
        import_yolo([("a.png", ["0 0.5 0.5 0.1 0.1", "7 0.5 0.5 0.1 0.1"])], base.images, cats)
    assert exc.value.line == 2
    with pytest.raises(FormatError):
        import_yolo([("a.png", ["0 1.5 0.5 0.1 0.1"])], base.images, cats)


def test_yolo_dir_round_trip(tmp_path):
    ds = random_dataset(np.random.default_rng(5), integer=True)
    write_yolo_dir(ds, tmp_path)
    assert (tmp_path / "classes.txt").read_text().splitlines() == ds.categories.names
    back = read_yolo_dir(tmp_path, ds)
    assert len(back.annotations) == len(ds.annotations)


@pytest.mark.parametrize("seed", range(20))
def test_coco_round_trip_random(seed):
    ds = random_dataset(np.random.default_rng(seed))
    assert parse_coco(write_coco(ds)) == ds


def test_write_independent_of_input_order():
    rng = np.random.default_rng(3)
    ds = random_dataset(rng)
    shuffled = Dataset(
        tuple(ds.images[k] for k in rng.permutation(len(ds.images))),
        tuple(ds.annotations[k] for k in rng.permutation(len(ds.annotations))),
        CategoryTable(tuple(reversed(ds.categories.entries))),
    )
    assert write_coco(shuffled) == write_coco(ds)
