"""
Recovering a part nobody can see
================================

Drop the slider's heatmap entirely. It rides on the rail (prismatic joint)
and carries the handle (fixed joint). Message passing places it from its
neighbours' evidence; the ICP baseline attaches it to a random neighbour and,
when that is the rail, guesses the slide position.
"""

import numpy as np

from artpose.assets import load_clamp
from artpose.baselines import drn_icp_estimate
from artpose.inference import InferenceConfig, run
from artpose.metrics import evaluate
from artpose.observation import (
    CorruptionSpec,
    default_camera,
    sample_configuration,
    synthesize,
)
from artpose.potentials import pairwise

model = load_clamp()
cam = default_camera()
hidden = model.index("slider")

gt, joint_values = sample_configuration(model, np.random.default_rng(7))
obs, _ = synthesize(model, gt, cam, CorruptionSpec(dropout_parts=[hidden]), seed=7)
print("slider heat mass:", obs.heatmaps[hidden].sum())

# %%
mp = run(model, obs, InferenceConfig(n_particles=300, n_iterations=100, seed=0))
runs = [("message passing", mp)] + [(f"ICP, seed {k}", drn_icp_estimate(model, obs, seed=k)) for k in range(3)]

for label, res in runs:
    rep = evaluate(model, gt, res.poses)
    psi = [round(pairwise(res.poses[t], res.poses[hidden], j), 4) for t, j in model.neighbors(hidden)]
    print(f"{label:16s} visible m {100 * np.mean(np.delete(rep.m, hidden)):5.2f} cm"
          f"   slider m {100 * rep.m[hidden]:5.2f} cm   pairwise to neighbours {psi}")

# %%
# Every filled-in slider sits exactly on one joint (pairwise 1 there). The
# question is which one, and at what slide value.
