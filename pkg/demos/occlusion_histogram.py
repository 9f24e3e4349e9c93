"""
Where do occluders sit on a shelf?
==================================

Simulate a few hundred shelf layers, then compare the occlusion
distribution read off the true geometry with the one guessed from boxes.
"""

import numpy as np

from occlusion_paste.occlusion import DIRECTIONS, estimate_histogram, infer_events, sample_point, total_variation
from occlusion_paste.scene import SceneConfig, synth_dataset

# %% simulate, no rendering needed for statistics
res = synth_dataset(SceneConfig(n_scenes=300), seed=1, render=False)
ds = res.dataset
print(len(ds.images), "scenes,", len(ds.annotations), "visible objects,", len(res.events), "oracle events")

# %% oracle histogram for one category
cat = ds.categories.ids[0]  # cola_can
oracle = estimate_histogram([e for _, e in res.events], cat)
print("\noracle counts for", ds.categories.name_of(cat))
print("ratio bin      " + " ".join(f"{d.value:>6}" for d in DIRECTIONS))
for k, row in enumerate(oracle.counts):
    lo, hi = oracle.bins.edges[k], oracle.bins.edges[k + 1]
    print(f"[{lo:.2f},{hi:.2f})  " + " ".join(f"{v:>6d}" for v in row))

# %% the same from boxes alone; depth order is unknown so both sides of an overlap count
inferred = []
for anns in ds.annotations_by_image().values():
    inferred.extend(infer_events(anns))
guess = estimate_histogram(inferred, cat)
print("\ntotal variation, inferred vs oracle:", round(total_variation(guess.probabilities, oracle.probabilities), 3))

# over all categories: walls stand at the back and sides, the front is open
dirs = [e.direction.value for _, e in res.events]
south = sum(d in ("S", "SE", "SW") for d in dirs) / len(dirs)
north = sum(d in ("N", "NE", "NW") for d in dirs) / len(dirs)
print(f"all oracle events: S-family {south:.2f}  N-family {north:.2f}")

# %% draw configurations to paste
rng = np.random.default_rng(0)
for _ in range(5):
    s = sample_point(oracle, rng)
    print(f"cover {s.ratio_lo:.2f}-{s.ratio_hi:.2f} from {s.direction.value}")
