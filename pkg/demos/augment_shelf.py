"""
Occlusion-driven copy-paste
===========================

Render a handful of synthetic layers, pick a category, and create new
images where donor crops cover it the way the category is usually covered.
"""

import sys
import tempfile
from pathlib import Path

from occlusion_paste.augment import Constraints, augment_dataset, write_manifest
from occlusion_paste.annotations import save_coco
from occlusion_paste.imaging import save_png
from occlusion_paste.occlusion import estimate_histogram
from occlusion_paste.scene import SceneConfig, synth_dataset

out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="paste_"))

# %% base images
base = synth_dataset(SceneConfig(n_scenes=20), seed=4)
pixels = {rec.id: px for rec, px in zip(base.dataset.images, base.images)}
events = [e for _, e in base.events]
# the best-observed category plays the new product
new_cat = max(base.dataset.categories.ids, key=lambda c: estimate_histogram(events, c).total)
hist = estimate_histogram(events, new_cat)
print(base.dataset.categories.name_of(new_cat), "has", hist.total, "oracle events")

# %% augment; every slot uses its own random stream so workers don't matter
res = augment_dataset(base.dataset, new_cat, 30, hist, Constraints(), seed=7, images=pixels)
pastes = [p for m in res.manifest for p in m["pastes"]]
print(len(res.images), "new images,", len(pastes), "pastes")
for p in pastes[:5]:
    s = p["sample"]
    print(
        f"  wanted {s['ratio_lo']:.2f}-{s['ratio_hi']:.2f} {s['direction']:<6} "
        f"got {p['achieved_ratio']:.3f} {p['achieved_direction']:<6} visible {p['visible_fraction']:.2f}"
    )

# %% write everything
(out / "images").mkdir(parents=True, exist_ok=True)
for rec, px in res.images:
    save_png(px, out / "images" / rec.file_name)
save_coco(res.dataset, out / "annotations.json")
write_manifest(res.manifest, out / "manifest.jsonl")
print("written to", out)
