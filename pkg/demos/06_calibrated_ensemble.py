"""Per-target calibration without a joint session.

Here the party that wants predictions (the target) holds a little labeled
data of its own. Instead of one big group, it runs an independent two-party
training session with each source, producing one pairwise model per source.
At prediction time the sources' answers reach the target blinded; only
their aggregated total is ever unmasked, so the target sees the ensemble
mean and nothing about any single source's model.

    python3 demos/06_calibrated_ensemble.py
"""

import numpy as np

from mpclr.field import make_params
from mpclr.regression import (
    LocalDataset,
    RunObserver,
    WorkflowConfig,
    infer_tc,
    train_tc,
)

params = make_params(20, 40)
config = WorkflowConfig(params=params, seed=11)

rng = np.random.default_rng(23)
weights = np.array([0.35, -0.15, 0.5])
sources = []
for _ in range(3):
    x = rng.uniform(-1.0, 1.0, (120, 2))
    y = x @ weights[:-1] + weights[-1] + rng.normal(0.0, 0.02, 120)
    sources.append(LocalDataset.from_plain(x, y, params))

calib_x = rng.uniform(-1.0, 1.0, (30, 2))
calib_y = calib_x @ weights[:-1] + weights[-1]
calibration = LocalDataset.from_plain(calib_x, calib_y, params)

observer = RunObserver()
model = train_tc(sources, calibration, config, observer)
print(f"{len(model.sessions)} pairwise sessions trained; "
      f"{observer.stats()['messages']} messages total")

test_x = rng.uniform(-1.0, 1.0, (5, 2))
predictions = infer_tc(model, test_x, config)
truth = test_x @ weights[:-1] + weights[-1]
for row, (p, t) in enumerate(zip(predictions, truth)):
    print(f"row {row}: ensemble {p:.6f}  truth {t:.6f}")
print(f"max deviation from the plant: {np.max(np.abs(predictions - truth)):.2e}")
