# %% [markdown]
# # Calibrating scores and watching them react to input noise
#
# Inputs live on a 2-D plane inside R^8. The network is calibrated on clean
# validation data, then tested on inputs pushed off that plane by isotropic
# noise of random amplitude.

# %%
from hcm.experiments import RunConfig, run_experiment

art = run_experiment(RunConfig.default("noise-shift"))
s = art.summary
print(f"temperature {s['temperature']:.4g}")
for split in ("clean", "perturbed"):
    rep = art.reports[split]
    print(f"{split:9s} pearson {rep.pearson:.3f}  cov@1 {rep.cov_1s:.3f}  cov@2 {rep.cov_2s:.3f}  "
          f"ece {rep.ece_reg:.4f}  mean conf {s['mean_conf_' + split]:.3f}")

# %% [markdown]
# Binned by normalized confidence, mean error should fall as confidence rises.

# %%
curve = art.tables["calibration-curve"]
for b, c, e, n in zip(curve["bin"], curve["conf_mean"], curve["err_mean"], curve["count"]):
    print(f"bin {b}: conf {c:.2f}  mean error {e:.3f}  n={n}")
print(f"spearman over bins {s['curve_spearman']:.3f}")
