import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from occlusion_paste.annotations import write_coco
from occlusion_paste.imaging import png_bytes
from occlusion_paste.occlusion import Source, estimate_histogram, RatioBins, DIRECTIONS, direction_from_offset
from occlusion_paste.scene import (
    CatalogItem,
    FisheyeCamera,
    LayerSpec,
    PlacedObject,
    SceneConfig,
    SceneSpec,
    SizeClass,
    classify_catalog,
    default_catalog,
    place_layer,
    project_fisheye,
    render_scene,
    synth_dataset,
    visible_annotations,
)

LAYER = LayerSpec()


def item(cid, w, d, h, cls=SizeClass.LARGE):
    return CatalogItem(cid, f"item{cid}", w, d, h, size_class=cls)


def test_classification_thresholds():
    cat = classify_catalog([item(1, 10, 10, 10, None), item(2, 10, 10, 20, None), item(3, 5, 5, 10, None), item(4, 10, 10, 15, None)])
    assert [c.size_class for c in cat] == [SizeClass.LARGE, SizeClass.TALL, SizeClass.SMALL, SizeClass.LARGE]
    classes = {c.name: c.size_class for c in default_catalog()}
    assert classes["water_bottle"] is SizeClass.TALL and classes["cola_can"] is SizeClass.SMALL


def near_wall(obj, layer):
    x0, y0, x1, y1 = obj.footprint
    m = layer.wall_margin + 1e-9
    return {"back": y0 <= m, "left": x0 <= m, "right": layer.width - x1 <= m, "front": layer.depth - y1 <= m}


@pytest.mark.parametrize("seed", range(20))
def test_tall_bottle_against_a_wall(seed):
    scene = place_layer([item(5, 6.5, 6.5, 22, SizeClass.TALL)], LAYER, np.random.default_rng(seed))
    (obj,) = scene.objects
    assert any(near_wall(obj, LAYER)[w] for w in LAYER.walls)


@pytest.mark.parametrize("seed", range(20))
def test_small_can_in_central_region(seed):
    scene = place_layer([item(1, 6.6, 6.6, 12, SizeClass.SMALL)], LAYER, np.random.default_rng(seed))
    (obj,) = scene.objects
    x0, y0, x1, y1 = LAYER.central_region
    assert x0 <= obj.x <= x1 and y0 <= obj.y <= y1


@pytest.mark.parametrize("seed", range(10))
def test_large_item_outside_central_region(seed):
    scene = place_layer([item(7, 20, 14, 6)], LAYER, np.random.default_rng(seed))
    (obj,) = scene.objects
    x0, y0, x1, y1 = LAYER.central_region
    assert not (x0 <= obj.x <= x1 and y0 <= obj.y <= y1)


def test_empty_catalog():
    scene = place_layer([], LAYER, np.random.default_rng(0))
    assert scene.objects == () and scene.skipped == ()


def test_overfull_layer_skips(caplog):
    big = [item(k, 30, 30, 5) for k in range(6)]
    scene = place_layer(big, LAYER, np.random.default_rng(0))
    assert len(scene.objects) + len(scene.skipped) == 6 and scene.skipped
    assert "skipped" in caplog.text


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 30))
def test_footprints_never_overlap(seed, n):
    rng = np.random.default_rng(seed)
    cat = default_catalog()
    picks = [cat[k] for k in rng.integers(len(cat), size=n)]
    scene = place_layer(picks, LAYER, rng, warn=False)
    fps = [o.footprint for o in scene.objects]
    for a in range(len(fps)):
        x0, y0, x1, y1 = fps[a]
        assert x0 >= 0 and y0 >= 0 and x1 <= LAYER.width and y1 <= LAYER.depth
        for b in range(a):
            u0, v0, u1, v1 = fps[b]
            assert x1 <= u0 or u1 <= x0 or y1 <= v0 or v1 <= y0


def test_projection_examples():
    cam = FisheyeCamera(focal=100, image_width=320, image_height=320)
    assert project_fisheye((0, 0, 5), cam) == (160.0, 160.0)
    big = FisheyeCamera(focal=400, image_width=1400, image_height=1400)
    u, v = project_fisheye((1.0, 0.0, 1.0), big)  # theta = pi/4, phi = 0
    assert u - big.cx == pytest.approx(400 * math.pi / 4, abs=1e-9) and v == big.cy
    assert project_fisheye((1, 0, -0.5), cam) is None
    assert project_fisheye((1, 0, 0), cam) == pytest.approx((160 + 100 * math.pi / 2, 160))
    with pytest.raises(ValueError):
        project_fisheye((0, 0, 0), cam)


def test_radius_increases_with_theta():
    cam = FisheyeCamera()
    radii = [math.dist(project_fisheye((math.tan(t), 0, 1), cam), cam.principal_point) for t in np.linspace(0.01, 1.5, 40)]
    assert all(b > a for a, b in zip(radii, radii[1:]))


@settings(max_examples=100, deadline=None)
@given(st.floats(-50, 50), st.floats(-50, 50), st.floats(0.1, 50))
def test_projection_keeps_azimuth(x, y, z):
    if math.hypot(x, y) < 1e-6:
        return
    cam = FisheyeCamera()
    u, v = project_fisheye((x, y, z), cam)
    got, want = math.atan2(v - cam.cy, u - cam.cx), math.atan2(y, x)
    assert (math.cos(got), math.sin(got)) == pytest.approx((math.cos(want), math.sin(want)), abs=1e-9)


def test_camera_must_fit_hemisphere():
    with pytest.raises(ValueError):
        FisheyeCamera(focal=200, image_width=320, image_height=320)


def test_single_object_fully_visible():
    scene = SceneSpec(LAYER, (PlacedObject(item(1, 8, 8, 10), 20, 15),))
    oracle = visible_annotations(scene, FisheyeCamera())
    (vis,) = oracle.objects
    assert vis.visible_fraction == 1.0 and oracle.events == [] and oracle.dropped == []
    assert vis.bbox is not None


def two_cuboids():
    a = PlacedObject(item(1, 6, 6, 20), 8, 20)
    b = PlacedObject(item(2, 6, 6, 20), 16, 20)
    return SceneSpec(LAYER, (a, b))


def test_occluder_between_camera_and_lateral_face():
    cam = FisheyeCamera()
    coarse = visible_annotations(two_cuboids(), cam, grid=24)
    fine = visible_annotations(two_cuboids(), cam, grid=96)
    assert [(e.target_category, e.occluder_category) for e in coarse.events] == [(1, 2)]
    assert coarse.events[0].ratio > 0 and coarse.events[0].source is Source.ORACLE
    assert coarse.blocked.get((1, 0), 0) == 0
    assert abs(coarse.events[0].ratio - fine.events[0].ratio) <= 0.03
    assert coarse.events[0].direction is direction_from_offset(1, 0, 0)


def test_hidden_object_is_dropped():
    hidden = PlacedObject(item(1, 2, 2, 2), 3, 20)
    wall = PlacedObject(item(2, 4, 30, 25), 10, 20)
    oracle = visible_annotations(SceneSpec(LAYER, (hidden, wall)), FisheyeCamera())
    assert oracle.dropped == [0]
    assert [o.index for o in oracle.annotated] == [1]
    assert all(e.target_category != 1 for e in oracle.events)


def test_min_visible_threshold_drops():
    cam = FisheyeCamera()
    full = visible_annotations(two_cuboids(), cam)
    frac = full.objects[0].visible_fraction
    assert 0 < frac < 1
    cut = visible_annotations(two_cuboids(), cam, min_visible=frac + 1e-6)
    assert cut.dropped == [0]
    for o in cut.annotated:
        assert o.visible_fraction >= frac + 1e-6


def test_render_paints_categories():
    scene = two_cuboids()
    cam = FisheyeCamera()
    img = render_scene(scene, cam)
    assert img.shape == (cam.image_height, cam.image_width, 3)
    assert len(np.unique(img.reshape(-1, 3), axis=0)) >= 4  # outside, floor, two objects


def test_synth_single_object():
    cfg = SceneConfig(catalog=(item(1, 8, 8, 10, None),), n_scenes=1, items_per_scene=(1, 1))
    res = synth_dataset(cfg, seed=0)
    assert len(res.dataset.images) == 1 and len(res.dataset.annotations) == 1


def test_synth_deterministic_and_worker_independent():
    cfg = SceneConfig(n_scenes=6)
    a = synth_dataset(cfg, seed=11)
    b = synth_dataset(cfg, seed=11, workers=2)
    assert write_coco(a.dataset) == write_coco(b.dataset)
    assert [png_bytes(p) for p in a.images] == [png_bytes(p) for p in b.images]
    assert a.event_records() == b.event_records()
    c = synth_dataset(cfg, seed=12)
    assert write_coco(c.dataset) != write_coco(a.dataset)


def test_every_object_annotated_or_dropped():
    res = synth_dataset(SceneConfig(n_scenes=10, min_visible=0.2), seed=2, render=False)
    for scene, oracle in zip(res.scenes, res.oracles):
        annotated = {o.index for o in oracle.annotated}
        assert annotated | set(oracle.dropped) == set(range(len(scene.objects)))
        assert not annotated & set(oracle.dropped)
        assert all(o.visible_fraction >= 0.2 for o in oracle.annotated)


def test_oracle_events_close_the_loop():
    res = synth_dataset(SceneConfig(n_scenes=30), seed=5, render=False)
    bins = RatioBins()
    for cat in res.dataset.categories.ids:
        expected = np.zeros((len(bins), 9), int)
        for scene, oracle in zip(res.scenes, res.oracles):
            sizes = {o.index: o.n_samples for o in oracle.objects}
            for (i, j), n in oracle.blocked.items():
                if scene.objects[i].item.category_id == cat:
                    ev = [e for e in oracle.events if e.ratio == n / sizes[i]]
                    expected[bins.index(n / sizes[i]), DIRECTIONS.index(ev[0].direction)] += 1
        hist = estimate_histogram([e for _, e in res.events], cat)
        assert hist.total == expected.sum()
        assert hist.counts.sum(axis=1).tolist() == expected.sum(axis=1).tolist()


def test_scene_config_json_round_trip():
    cfg = SceneConfig(n_scenes=3, grid=12, layer=replace(LAYER, width=50))
    assert SceneConfig.from_json(cfg.to_json()) == cfg
