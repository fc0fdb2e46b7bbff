"""Plan an unprotected left turn through predicted crossing traffic.

The planner scores piecewise-constant acceleration profiles along a fixed
turn path (a shooting method): each candidate is rolled forward against
the model's prediction of the crossing cars, conditioned on the ego
following that candidate, and the best profile's first action is executed
in receding horizon.

The prediction model is trained on scenes from the planner's own domain
(same dt, same roads), which takes a couple of minutes here: the budget
has to be enough for the model to track crosser speeds instead of
predicting the dataset-mean crosser, or the planner commits into gaps
that are not there.
"""

from mfp import EncoderConfig, Model
from mfp.planner import PlanTask, closed_loop_eval, domain_scenes, task_for_regime
from mfp.training import TrainConfig, dataset_mean_future, train

task = PlanTask()
train_scenes = domain_scenes(task, 400, seed=11)
val_scenes = domain_scenes(task, 40, seed=12)

cfg = EncoderConfig(enc_hidden=16, slots=4, key_dim=6, key_hidden=12,
                    dyn_out=12, slot_hidden=16, context_dim=8, dec_hidden=24)
tc = TrainConfig(modes=2, seed=0, phase1_updates=2500, phase2_updates=500,
                 val_every=500, log_every=500)
model = Model(modes=tc.modes, cfg=cfg, seed=tc.seed)
model.mean_future = dataset_mean_future(train_scenes)
result = train(train_scenes, val_scenes, tc, model=model, log=print)

trials = 20
for regime in ("nominal", "fast5"):
    rep = closed_loop_eval(task_for_regime(regime), result.model, trials,
                           seed=5, policy="mfp")
    print(f"{regime:8s} planner:   crash {rep.crash_rate:.0%}  "
          f"success {rep.success_rate:.0%}  mean reward {rep.mean_reward:7.1f}")

rep = closed_loop_eval(task_for_regime("nominal"), None, trials, seed=5,
                       policy="always_accel")
print(f"always-accelerate: crash {rep.crash_rate:.0%}  "
      f"success {rep.success_rate:.0%}  mean reward {rep.mean_reward:7.1f}")
