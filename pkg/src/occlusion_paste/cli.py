"""Command-line entry point: ``occlusion-paste <command> [options]``.

Every option can also come from a JSON config given with ``--config``; flags
win over the file. Each run leaves the fully resolved settings next to its
output (``run.json`` inside an output directory, ``<file>.run.json`` beside
an output file); feeding that back through ``--config`` repeats the run.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import jsonschema

from . import __version__
from .annotations import AnnotationError, load_coco, read_yolo_dir, save_coco, write_yolo_dir
from .augment import (
    Constraints,
    EmptyPoolError,
    InfeasibleAugmentationError,
    augment_dataset,
    build_donor_pool,
    write_manifest,
)
from .imaging import save_png
from .metrics import confidence_csv, confidence_report, evaluate, read_predictions
from .occlusion import (
    DEFAULT_BIN_EDGES,
    EmptyHistogramError,
    OcclusionEvent,
    OcclusionHistogram,
    RatioBins,
    cell_sample,
    estimate_histogram,
    infer_events,
    sample_points,
)
from .scene import SceneConfig, synth_dataset
from .streams import substream

log = logging.getLogger("occlusion_paste")

_number = {"type": "number"}
_int = {"type": "integer"}
_path = {"type": "string", "minLength": 1}
_fraction = {"type": "number", "minimum": 0, "maximum": 1}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "command": {"enum": ["convert", "stats", "sample", "augment", "synth", "eval", "report"]},
        "version": {"type": "string"},
        "seed": {"type": "integer", "minimum": 0},
        "workers": {"type": "integer", "minimum": 1},
        "in": _path,
        "in_yolo": _path,
        "out": _path,
        "out_yolo": _path,
        "images": _path,
        "events": _path,
        "hist": _path,
        "gt": _path,
        "pred": _path,
        "category": _int,
        "categories": {"type": "array", "items": _int},
        "count": {"type": "integer", "minimum": 0},
        "n": {"type": "integer", "minimum": 0},
        "bins": {"type": "array", "items": _fraction, "minItems": 2},
        "r_min": _fraction,
        "adjacency_gap": {"type": "number", "minimum": 0},
        "constraints": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "max_overlap": _fraction,
                "min_visible": _fraction,
                "scale_range": {"type": "array", "items": _number, "minItems": 2, "maxItems": 2},
                "max_attempts": {"type": "integer", "minimum": 1},
            },
        },
        "donor_categories": {"type": ["array", "null"], "items": _int},
        "scene": {"type": "object"},
        "n_scenes": {"type": "integer", "minimum": 1},
        "render": {"type": "boolean"},
        "taus": {"type": "array", "items": _fraction, "minItems": 1},
        "iou_min": _fraction,
        "conf_min": _fraction,
        "bin_width": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
    },
}

DEFAULTS = {
    "convert": {},
    "stats": {"bins": list(DEFAULT_BIN_EDGES), "r_min": 0.05, "adjacency_gap": 2.0},
    "sample": {"n": 1000},
    "augment": {"workers": 1, "constraints": Constraints().to_json(), "donor_categories": None},
    "synth": {"workers": 1, "n_scenes": 100, "render": True, "scene": {}},
    "eval": {"taus": [0.9, 0.95], "iou_min": 0.5, "conf_min": 0.25},
    "report": {"bin_width": 0.1},
}

REQUIRED = {
    "convert": [],
    "stats": ["category", "out"],
    "sample": ["hist", "seed", "out"],
    "augment": ["in", "images", "hist", "category", "count", "seed", "out"],
    "synth": ["seed", "out"],
    "eval": ["gt", "pred"],
    "report": ["pred", "category"],
}


class UsageError(Exception):
    pass


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="occlusion-paste", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, metavar="command")

    def add(name, help_):
        sp = sub.add_parser(name, help=help_, description=help_)
        sp.add_argument("--config", help="JSON config; flags override its fields")
        return sp

    sp = add("convert", "COCO <-> YOLO label conversion")
    sp.add_argument("--in", dest="in", help="COCO json (to YOLO), or reference COCO json for image sizes (from YOLO)")
    sp.add_argument("--out-yolo", dest="out_yolo", help="write YOLO labels + classes.txt here")
    sp.add_argument("--in-yolo", dest="in_yolo", help="read YOLO labels from this directory")
    sp.add_argument("--out", help="COCO json to write")

    sp = add("stats", "occlusion events and (ratio, direction) histogram for one category")
    src = sp.add_mutually_exclusive_group()
    src.add_argument("--in", dest="in", help="COCO json; events are inferred from its boxes")
    src.add_argument("--events", help="events JSON lines (e.g. the oracle events written by synth)")
    sp.add_argument("--category", type=int)
    sp.add_argument("--bins", type=float, nargs="+", help="ratio bin edges from 0 to 1")
    sp.add_argument("--r-min", dest="r_min", type=float, help="smallest overlap that counts as occlusion")
    sp.add_argument("--adjacency-gap", dest="adjacency_gap", type=float, help="pixels; touching boxes within it give ratio-0 events")
    sp.add_argument("--out", help="histogram json")

    sp = add("sample", "draw samples from a histogram")
    sp.add_argument("--hist")
    sp.add_argument("-n", dest="n", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out", help="samples as JSON lines")

    sp = add("augment", "paste donor crops over a category following its occlusion histogram")
    sp.add_argument("--in", dest="in", help="COCO json of the base dataset")
    sp.add_argument("--images", help="directory holding the base images")
    sp.add_argument("--hist", help="histogram json for the category")
    sp.add_argument("--category", type=int, help="category to occlude")
    sp.add_argument("--count", type=int, help="number of images to create")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--workers", type=int)
    sp.add_argument("--out", help="output directory")

    sp = add("synth", "render synthetic shelf scenes with oracle occlusion events")
    sp.add_argument("--n-scenes", dest="n_scenes", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--workers", type=int)
    sp.add_argument("--no-render", dest="render", action="store_const", const=False, help="annotations and events only")
    sp.add_argument("--out", help="output directory")

    sp = add("eval", "AP, pass rate and mis-detect rates")
    sp.add_argument("--gt", help="ground-truth COCO json")
    sp.add_argument("--pred", help="predictions JSON lines")
    sp.add_argument("--category", dest="categories", type=int, action="append", help="repeatable; default all")
    sp.add_argument("--tau", dest="taus", type=float, action="append", help="confidence threshold, repeatable (default 0.9 and 0.95)")
    sp.add_argument("--iou-min", dest="iou_min", type=float, help="IoU needed for a match (default 0.5)")
    sp.add_argument("--conf-min", dest="conf_min", type=float, help="confidence needed by pass rate (default 0.25)")
    sp.add_argument("--out", help="report json; a .csv twin is written next to it")

    sp = add("report", "confidence histogram CSV for one category")
    sp.add_argument("--pred")
    sp.add_argument("--category", type=int)
    sp.add_argument("--bin-width", dest="bin_width", type=float)
    sp.add_argument("--out", help="CSV path (default stdout)")
    return p


def resolve(command: str, flags: dict, config_path: Optional[str]) -> dict:
    """Defaults, then the config file, then explicit flags."""
    cfg: dict = {}
    if config_path:
        try:
            cfg = json.loads(Path(config_path).read_text())
        except (OSError, ValueError) as exc:
            raise UsageError(f"cannot read config {config_path}: {exc}") from exc
    merged = json.loads(json.dumps(DEFAULTS[command]))
    merged.update(cfg)
    merged.update({k: v for k, v in flags.items() if v is not None})
    try:
        jsonschema.validate(merged, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise UsageError(f"invalid config at {where}: {exc.message}") from exc
    if merged.get("command", command) != command:
        raise UsageError(f"config was written for {merged['command']!r}, not {command!r}")
    missing = [k for k in REQUIRED[command] if merged.get(k) is None]
    if missing:
        raise UsageError("missing required setting(s): " + ", ".join("--" + k.replace("_", "-") for k in missing))
    merged["command"] = command
    merged["version"] = __version__
    return merged


def _write_run(out: Path, cfg: dict) -> None:
    path = out / "run.json" if out.is_dir() else out.with_name(out.name + ".run.json")
    path.write_text(json.dumps(cfg, sort_keys=True, indent=1) + "\n")


def _read_events(path: str) -> list[OcclusionEvent]:
    lines = Path(path).read_text().splitlines()
    return [OcclusionEvent.from_json(json.loads(line)) for line in lines if line.strip()]


def _load_hist(path: str) -> OcclusionHistogram:
    return OcclusionHistogram.from_json(json.loads(Path(path).read_text()))


# -- commands --------------------------------------------------------------


def cmd_convert(cfg: dict) -> None:
    if cfg.get("out_yolo"):
        if not cfg.get("in"):
            raise UsageError("--out-yolo needs --in")
        warnings: list[str] = []
        paths = write_yolo_dir(load_coco(cfg["in"]), cfg["out_yolo"], warnings)
        for w in warnings:
            log.warning(w)
        _write_run(Path(cfg["out_yolo"]), cfg)
        print(f"wrote {len(paths) - 1} label files and classes.txt to {cfg['out_yolo']}")
    elif cfg.get("in_yolo"):
        if not (cfg.get("in") and cfg.get("out")):
            raise UsageError("--in-yolo needs --in (reference COCO with image sizes and categories) and --out")
        ds = read_yolo_dir(cfg["in_yolo"], load_coco(cfg["in"]))
        save_coco(ds, cfg["out"])
        _write_run(Path(cfg["out"]), cfg)
        print(f"wrote {len(ds.annotations)} annotations to {cfg['out']}")
    else:
        raise UsageError("convert needs --out-yolo (from COCO) or --in-yolo (to COCO)")


def cmd_stats(cfg: dict) -> None:
    bins = RatioBins(tuple(cfg["bins"]))
    if cfg.get("events"):
        events = _read_events(cfg["events"])
    elif cfg.get("in"):
        ds = load_coco(cfg["in"])
        events = []
        for anns in ds.annotations_by_image().values():
            events.extend(infer_events(anns, cfg["r_min"], cfg["adjacency_gap"]))
    else:
        raise UsageError("stats needs --in or --events")
    hist = estimate_histogram(events, cfg["category"], bins)
    Path(cfg["out"]).write_text(hist.dumps() + "\n")
    _write_run(Path(cfg["out"]), cfg)
    print(f"category {cfg['category']}: {hist.total} events -> {cfg['out']}")


def cmd_sample(cfg: dict) -> None:
    hist = _load_hist(cfg["hist"])
    flat = sample_points(hist, substream(cfg["seed"], 0), cfg["n"])
    lines = []
    for k in flat:
        s = cell_sample(hist, k)
        lines.append(json.dumps({"ratio_lo": s.ratio_lo, "ratio_hi": s.ratio_hi, "direction": s.direction.value}))
    Path(cfg["out"]).write_text("".join(line + "\n" for line in lines))
    _write_run(Path(cfg["out"]), cfg)


def cmd_augment(cfg: dict) -> None:
    ds = load_coco(cfg["in"])
    hist = _load_hist(cfg["hist"])
    c = cfg["constraints"]
    constraints = Constraints(
        c.get("max_overlap", 0.3),
        c.get("min_visible", 0.1),
        tuple(c.get("scale_range", (0.5, 2.0))),
        c.get("max_attempts", 50),
    )
    pool = None
    if cfg.get("donor_categories") is not None:
        pool = build_donor_pool(ds, cfg["images"], cfg["donor_categories"])
    result = augment_dataset(
        ds,
        cfg["category"],
        cfg["count"],
        hist,
        constraints,
        cfg["seed"],
        pool=pool,
        image_root=cfg["images"],
        workers=cfg["workers"],
    )
    out = Path(cfg["out"])
    (out / "images").mkdir(parents=True, exist_ok=True)
    for rec, pixels in result.images:
        save_png(pixels, out / "images" / rec.file_name)
    save_coco(result.dataset, out / "annotations.json")
    write_manifest(result.manifest, out / "manifest.jsonl")
    _write_run(out, cfg)
    print(f"wrote {len(result.images)} images to {out / 'images'}")


def cmd_synth(cfg: dict) -> None:
    try:
        scene_cfg = SceneConfig.from_json({**cfg["scene"], "n_scenes": cfg["n_scenes"]})
    except (TypeError, ValueError, KeyError) as exc:
        raise UsageError(f"invalid scene config: {exc}") from exc
    cfg["scene"] = {k: v for k, v in scene_cfg.to_json().items() if k != "n_scenes"}
    result = synth_dataset(scene_cfg, cfg["seed"], workers=cfg["workers"], render=cfg["render"])
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    if cfg["render"]:
        (out / "images").mkdir(exist_ok=True)
        for rec, pixels in zip(result.dataset.images, result.images):
            save_png(pixels, out / "images" / rec.file_name)
    save_coco(result.dataset, out / "annotations.json")
    with open(out / "events.jsonl", "w") as fh:
        for k, ev in result.events:
            fh.write(json.dumps({"scene": k, **ev.to_json()}, sort_keys=True) + "\n")
    _write_run(out, cfg)
    print(f"wrote {len(result.dataset.images)} scenes and {len(result.events)} oracle events to {out}")


def cmd_eval(cfg: dict) -> None:
    ds = load_coco(cfg["gt"])
    preds = read_predictions(cfg["pred"])
    cats = cfg.get("categories") or list(ds.categories.ids)
    report = evaluate(ds.annotations, preds, cats, tuple(cfg["taus"]), cfg["iou_min"], cfg["conf_min"])
    text = json.dumps(report.to_json(), sort_keys=True, indent=1) + "\n"
    if cfg.get("out"):
        out = Path(cfg["out"])
        out.write_text(text)
        out.with_suffix(".csv").write_text(report.to_csv())
        _write_run(out, cfg)
    else:
        sys.stdout.write(text)


def cmd_report(cfg: dict) -> None:
    edges, counts = confidence_report(read_predictions(cfg["pred"]), cfg["category"], cfg["bin_width"])
    text = confidence_csv(edges, counts)
    if cfg.get("out"):
        Path(cfg["out"]).write_text(text)
        _write_run(Path(cfg["out"]), cfg)
    else:
        sys.stdout.write(text)


COMMANDS = {
    "convert": cmd_convert,
    "stats": cmd_stats,
    "sample": cmd_sample,
    "augment": cmd_augment,
    "synth": cmd_synth,
    "eval": cmd_eval,
    "report": cmd_report,
}

RUNTIME_ERRORS = (
    AnnotationError,
    EmptyHistogramError,
    EmptyPoolError,
    InfeasibleAugmentationError,
    OSError,
    ValueError,
    KeyError,
)


def run(argv: Optional[Sequence[str]] = None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "config", "verbose")}
    try:
        cfg = resolve(args.command, flags, args.config)
        COMMANDS[args.command](cfg)
    except UsageError as exc:
        print(f"{parser.prog} {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except RUNTIME_ERRORS as exc:
        print(f"{parser.prog} {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(run())
