"""SMOTE followed by Tomek-link cleaning on a small imbalanced set."""
import numpy as np

from reroute.features import FeatureSchema, MergedDataset
from reroute.resample import ResampleConfig, smote_tomek

rng = np.random.default_rng(0)
rows = np.vstack([rng.normal(0.4, 0.12, (300, 2)), rng.normal(0.65, 0.08, (30, 2))]).clip(0, 1)
labels = np.r_[np.zeros(300), np.ones(30)].astype(np.uint8)
ts = np.datetime64("2020-06-01T00:00") + np.arange(len(rows)) * np.timedelta64(15, "m")
ds = MergedDataset(FeatureSchema(("x", "y")), rows, labels, ts)

for mode in ("both", "majority"):
    out, report = smote_tomek(ds, ResampleConfig(k_neighbors=5, tomek_removal=mode))
    print(f"{mode:<9}", report.to_dict())
    syn = np.flatnonzero(out.synthetic)
    print(f"          first synthetic row {out.rows[syn[0]].round(3)} from parents {out.parents[syn[0]]}")
