"""Train a small 3-mode model on the synthetic intersection data.

A short run at a reduced budget: enough to watch the NLL fall and the
three latent modes latch onto the generator's behaviors, small enough to
finish in about a minute.  Writes demo_model.ckpt for the later demos.

Training is two-phase: classmates forcing first (each agent decodes
against ground-truth futures for everyone else, giving exact per-agent
mode posteriors), then interactive rollouts for the decoder inputs.
"""

from mfp import ScenarioConfig, generate_synthetic
from mfp.training import TrainConfig, save_checkpoint, train, validation_nll

train_scenes = generate_synthetic(ScenarioConfig(num_scenes=400, seed=1))
val_scenes = generate_synthetic(ScenarioConfig(num_scenes=60, seed=2))

# sigma_warmup scaled down with the budget (default 1000 would cover the
# whole run and the spread head would never train)
cfg = TrainConfig(modes=3, seed=0, phase1_updates=700, phase2_updates=200,
                  sigma_warmup=300, val_every=150, log_every=150)
result = train(train_scenes, val_scenes, cfg, log=print)

nll = validation_nll(result.model, val_scenes)
print(f"final validation NLL: {nll:.4f} nats per agent-step")

save_checkpoint("demo_model.ckpt", result.model, result.adam,
                result.update, cfg)
print("saved demo_model.ckpt")
