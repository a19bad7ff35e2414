"""
Kriging unobserved sensors on synthetic traffic data
====================================================

Generate a small speed dataset, hide a third of the sensors plus some
time points and readings, and fill everything back in.
"""

import numpy as np

from letc import MaskScenario, SolverConfig, apply_scenario, evaluate, generate_synthetic, solve
from letc.harness import neighbor_mean_baseline

# 60 sensors, 48 readings a day, two weeks, weekly rhythm
ds, truth = generate_synthetic(60, 48, 14, period=7, noise_sd=1.0, seed=3)
print("speed matrix:", ds.values.shape, "(time points x sensors)")

# hide 30% of the sensors, 20% of the time points and 20% of what is left
obs, truth = apply_scenario(ds, MaskScenario(sm_rate=0.3, tm_rate=0.2, em_rate=0.2, seed=0))
print("observed fraction:", round(obs.mask.mean(), 3))

graph = ds.graph()
z_hat, diag = solve(obs, graph, SolverConfig())
print("converged after", diag.iterations, "iterations")

m = evaluate(z_hat, truth, obs.holdout)
print(f"LETC           MAE {m.mae:.3f}  RMSE {m.rmse:.3f}  WMAPE {m.wmape:.4f}")

# for comparison: fill from the graph neighbours only
b = evaluate(neighbor_mean_baseline(obs, graph), truth, obs.holdout)
print(f"neighbour mean MAE {b.mae:.3f}  RMSE {b.rmse:.3f}")

# the observations come back untouched
assert np.array_equal(z_hat[obs.mask], obs.values[obs.mask])
