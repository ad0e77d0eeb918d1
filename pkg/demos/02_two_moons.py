# %% [markdown]
# # Scores near the decision boundary
#
# One-hot targets have magnitude 1, so the network only has to learn a
# direction. Where the two classes meet the direction head averages two unit
# vectors and its norm drops below one, which is exactly what `u` measures.

# %%
import numpy as np

from hcm.experiments import RunConfig, run_experiment

art = run_experiment(RunConfig.default("two-moons"))
s = art.summary
print(f"accuracy {s['accuracy']:.3f}  spearman(u, distance) {s['spearman_u_dist']:.3f}")
print(f"median boundary distance: all {s['median_dist_all']:.3f}, u > 0.15 {s['median_dist_high_u']:.3f}")

# %%
t = art.scores
order = np.argsort(t["u"])[::-1][:5]
for i in order:
    print(f"x=({t['x0'][i]:+.2f}, {t['x1'][i]:+.2f})  u={t['u'][i]:.3f}  dist={t['boundary_dist'][i]:.3f}")
