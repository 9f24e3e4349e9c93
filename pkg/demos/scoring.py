"""
Scoring a detector that confuses look-alikes
============================================

A fake detector finds most boxes but sometimes names the wrong product
with high confidence. Pass rate and the mis-detect rates show the damage
differently from AP.
"""

import numpy as np

from occlusion_paste.metrics import Prediction, confidence_csv, confidence_report, evaluate
from occlusion_paste.scene import SceneConfig, synth_dataset

res = synth_dataset(SceneConfig(n_scenes=60), seed=3, render=False)
gt = res.dataset.annotations
rng = np.random.default_rng(0)

# %% fake detector: jittered boxes, 10% misses, cola cans often called milk boxes
preds = []
for a in gt:
    if rng.random() < 0.1:
        continue
    cat = a.category_id
    conf = float(rng.uniform(0.5, 1.0))
    if cat == 1 and rng.random() < 0.3:
        cat, conf = 2, float(rng.uniform(0.85, 1.0))
    box = a.bbox.translated(*rng.normal(0, 0.5, size=2))
    preds.append(Prediction(a.image_id, cat, box, conf))

# %% report
report = evaluate(gt, preds, [1, 2], taus=(0.9, 0.95))
print(report.to_csv())

# %% confidence distribution of the confused category
edges, counts = confidence_report(preds, 2, 0.05)
print(confidence_csv(edges, counts))
