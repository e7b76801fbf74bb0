"""Several data holders fit one regression model together.

Nobody reveals rows, responses, or even the learned coefficients: training
ends with each party holding one additive fragment of the coefficient
vector. A client can then get predictions by sharing its query row to the
group, and only ever learns the final answer.

    python3 demos/05_joint_training.py
"""

import numpy as np

from mpclr.field import make_params
from mpclr.regression import (
    LocalDataset,
    RunObserver,
    WorkflowConfig,
    design_matrix,
    infer_ti,
    solve_normal_equations,
    train_ti,
)

params = make_params(20, 40)
config = WorkflowConfig(params=params, seed=42)

# three hospitals, say, each with private rows from the same process
rng = np.random.default_rng(7)
weights = np.array([0.3, -0.2, 0.25, 0.5])  # last entry is the intercept
features, responses, parties = [], [], []
for _ in range(3):
    x = rng.uniform(-1.0, 1.0, (150, 3))
    y = x @ weights[:-1] + weights[-1] + rng.normal(0.0, 0.02, 150)
    features.append(x)
    responses.append(y)
    parties.append(LocalDataset.from_plain(x, y, params))

observer = RunObserver()
model = train_ti(parties, config, observer)
print(f"trained over {sum(p.rows for p in parties)} rows held by "
      f"{len(parties)} parties")
print(f"traffic: {observer.stats()['messages']} messages, "
      f"{observer.stats()['bytes']} bytes, {observer.stats()['rounds']} rounds")

# the fragments only mean something when everyone cooperates
beta = model.coefficients()  # reconstruction: a diagnostic, not a protocol
oracle = solve_normal_equations(
    design_matrix(np.vstack(features), True), np.concatenate(responses))
print(f"coefficients match the plaintext normal equations to "
      f"{np.max(np.abs(beta - oracle)):.2e}")

# a client with a fresh observation queries the group
query = np.array([0.1, -0.4, 0.2])
prediction = infer_ti(model, query, config)
print(f"prediction for {query.tolist()}: {prediction:.6f}")
print(f"plaintext oracle:              "
      f"{float(np.append(query, 1.0) @ oracle):.6f}")
