"""The whole pipeline in one go, the way the experiments run it.

A response-time log becomes a drowsiness series (the regression target),
synthetic parties stand in for private datasets, and run_scenario executes
the offline phase, joint training, and inference twice: once in the clear
and once over shared data. The report shows both RMSE columns agreeing.

    python3 demos/07_full_scenario.py
"""

import numpy as np

from mpclr.harness import (
    RunReport,
    ScenarioConfig,
    label_response_times,
    run_scenario,
)

# labeling: seconds-to-respond mapped into [0, 1) and smoothed
taus = np.concatenate([np.full(30, 0.8), np.linspace(0.8, 4.0, 60),
                       np.full(30, 4.0)])
drowsiness = label_response_times(taus, tau0=1.0, window=90.0)
print(f"alert start: {drowsiness[0]:.3f}; drowsy end: {drowsiness[-1]:.3f}")

# a small joint-training scenario; mode="spawn" would run one OS process
# per role over localhost sockets instead of threads
report = run_scenario(ScenarioConfig(
    scenario="ti", mode="threads", m=3, k=5, rows=120, test_rows=30,
    e=20, f=40, iterations=24, seed=1, data_seed=1))
print()
print(RunReport.table([report]))
print()
print(f"|rmse_smc - rmse_clear| = "
      f"{abs(report.rmse_smc - report.rmse_clear):.2e}")

# the calibrated-ensemble flavor of the same experiment
report = run_scenario(ScenarioConfig(
    scenario="tc", mode="threads", m=2, k=5, rows=120, calibration_rows=30,
    test_rows=30, e=20, f=40, iterations=24, seed=2, data_seed=2))
print()
print(RunReport.table([report]))
