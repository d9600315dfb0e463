"""
A small ablation on cluttered scenes
====================================

Every method on the same handful of cluttered scenes, scored with the
matching error and its symmetric variant. Increase ``N_SCENES`` for a
steadier ranking; twenty scenes take several minutes per method.
"""

import time

from artpose.assets import load_clamp
from artpose.methods import METHODS
from artpose.metrics import run_suite
from artpose.observation import make_scene

N_SCENES = 4

model = load_clamp()
scenes = [make_scene(model, 1000 + i, "cluttered") for i in range(N_SCENES)]

start = time.perf_counter()
suite = run_suite(scenes, METHODS, seeds=(0,))
print(f"{len(suite.rows)} runs in {time.perf_counter() - start:.0f} s\n")
print(suite.summary())

# %%
# Mean object error per method, best first.
for method in sorted(suite.methods(), key=suite.mean_m):
    print(f"{method:12s} {100 * suite.mean_m(method):5.2f} cm")

# %%
# The pass-rate curve behind a "fraction below threshold" plot.
print(suite.curve_csv("mp-rgbd"))
