"""Evaluate the model from demo 02 on held-out scenes.

Covers the standard forecasting metrics: marginal trajectory NLL, RMSE per
horizon against a constant-velocity baseline, best-of-S displacement
metrics, and how well the latent modes line up with the generator's
ground-truth behavior labels.

Run 02_train_small.py first to produce demo_model.ckpt.
"""

from mfp import ScenarioConfig, generate_synthetic
from mfp.eval import (cv_rmse_per_horizon, min_displacement, mode_recovery,
                      rmse_per_horizon)
from mfp.training import load_checkpoint, validation_nll

model, _, update, _ = load_checkpoint("demo_model.ckpt")
test = generate_synthetic(ScenarioConfig(num_scenes=150, seed=3))
print(f"model at update {update}, {len(test)} test scenes")

print(f"test NLL: {validation_nll(model, test):.4f} nats per agent-step")

horizons = [1, 5, 10, 19]
rmse = rmse_per_horizon(model, test, horizons)
cv = cv_rmse_per_horizon(test, horizons)
print("horizon   model RMSE   const-velocity RMSE")
for h in horizons:
    print(f"  {h:2d}       {rmse[h]:7.3f}      {cv[h]:7.3f}")

for s in (1, 6, 12):
    ade = min_displacement(model, test, s, kind="ADE", seed=0)
    fde = min_displacement(model, test, s, kind="FDE", seed=0)
    print(f"minADE@{s:<2d} {ade:6.3f}   minFDE@{s:<2d} {fde:6.3f}")

rec = mode_recovery(model, test)
print(f"mode purity vs generator labels: {rec.purity:.3f}")
print("confusion (rows = latent modes, cols = fast/yield/stop):")
print(rec.confusion)
