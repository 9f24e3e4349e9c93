"""Occlusion-aware copy-paste augmentation for box-annotated detection data."""

__version__ = "0.1.0"

from .annotations import (
    Annotation,
    CategoryTable,
    Dataset,
    ImageRecord,
    export_yolo,
    import_yolo,
    load_coco,
    parse_coco,
    save_coco,
    validate,
    write_coco,
)
from .augment import Constraints, apply_plan, augment_dataset, build_donor_pool, clip_visible_bbox, plan_paste
from .geometry import Rect
from .metrics import (
    Prediction,
    ap_coco,
    average_precision,
    confidence_report,
    final_undistinguishable_rate,
    iou,
    match_greedy,
    misdetect_rate,
    pass_rate,
)
from .occlusion import (
    Direction,
    OcclusionEvent,
    OcclusionHistogram,
    RatioBins,
    estimate_histogram,
    infer_events,
    occlusion_direction,
    overlap_ratio,
    sample_point,
)
from .scene import SceneConfig, synth_dataset
