"""Command-line entry point.

Subcommands: gen-data, train, eval, predict, hypo, plan.  Every command
takes --seed and --out, writes a manifest.json describing the resolved run
before any long computation, and formats numbers with six decimals so
repeated runs diff clean.  Exit codes: 0 success, 1 runtime failure,
2 usage error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys


def _apply_thread_cap() -> None:
    """MFP_THREADS caps worker parallelism.  All work here is sequential
    single-process (parallelism 1, always within the cap); the cap is also
    forwarded to the BLAS pools when they have not been pinned yet."""
    cap = os.environ.get("MFP_THREADS")
    if not cap:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                "MKL_NUM_THREADS"):
        os.environ.setdefault(var, cap)


def _write_manifest(out_dir: str, command: str, args: argparse.Namespace,
                    outputs: list[str]) -> None:
    import mfp

    config = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    manifest = {
        "command": command,
        "config": config,
        "seed": getattr(args, "seed", None),
        "version": mfp.__version__,
        "outputs": outputs,
    }
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_split(args):
    """Shared data plumbing: CSV -> windows (+labels) -> source-id split."""
    from .data import (WindowSpec, load_labels, load_trajectories,
                       split_dataset, window_scenes)

    tracks = load_trajectories(args.data, dt=1.0 / args.rate)
    labels = None
    if getattr(args, "labels", None):
        labels = load_labels(args.labels)
    spec = WindowSpec()
    scenes = window_scenes(tracks, spec, labels=labels)
    if not scenes:
        raise ValueError(f"{args.data}: no usable windows")
    train, val, test = split_dataset(scenes, seed=args.split_seed)
    return {"train": train, "val": val, "test": test, "all": scenes}


def _pick_scenes(args, scenes: list):
    if args.scene is None:
        return scenes
    picked = []
    for token in args.scene.split(","):
        token = token.strip()
        if token.isdigit():
            idx = int(token)
            if not 0 <= idx < len(scenes):
                raise ValueError(f"scene index {idx} outside 0..{len(scenes)-1}")
            picked.append(scenes[idx])
        else:
            match = [s for s in scenes if s.scene_id == token]
            if not match:
                raise ValueError(f"no scene with id {token!r} in the split")
            picked.extend(match)
    return picked


# ---------------------------------------------------------------------------
# commands

def cmd_gen_data(args) -> int:
    from .data import ScenarioConfig, generate_raw_tracks, save_labels, \
        save_trajectories

    out_traj = os.path.join(args.out, "trajectories.csv")
    out_labels = os.path.join(args.out, "labels.csv")
    _write_manifest(args.out, "gen-data", args, [out_traj, out_labels])
    cfg = ScenarioConfig(num_scenes=args.scenes, seed=args.seed,
                         rate=args.rate)
    raws = generate_raw_tracks(cfg)
    save_trajectories(out_traj, raws)
    save_labels(out_labels, raws)
    print(f"wrote {len(raws)} scenes to {out_traj}")
    return 0


def cmd_train(args) -> int:
    from .training import TrainConfig, load_checkpoint, train

    ckpt = os.path.join(args.out, "model.ckpt")
    log_path = os.path.join(args.out, "train.log")
    _write_manifest(args.out, "train", args, [ckpt, log_path])
    splits = _load_split(args)
    phase2 = min(args.phase2, args.updates)
    config = TrainConfig(
        modes=args.modes, seed=args.seed,
        phase1_updates=args.updates - phase2, phase2_updates=phase2,
        lr=args.lr, val_every=args.val_every,
        checkpoint_every=args.checkpoint_every, log_every=args.log_every,
        sigma_warmup=args.sigma_warmup)
    model = adam = None
    start = 0
    if args.resume:
        model, adam, start, _ = load_checkpoint(ckpt)
    lines = []

    def log(msg: str) -> None:
        lines.append(msg)
        print(msg)

    train(splits["train"], splits["val"], config, model=model, adam=adam,
          start_update=start, checkpoint_path=ckpt, log=log)
    with open(log_path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return 0


def cmd_eval(args) -> int:
    from .eval import evaluate, mode_recovery
    from .training import load_checkpoint

    report_txt = os.path.join(args.out, "report.txt")
    report_csv = os.path.join(args.out, "report.csv")
    _write_manifest(args.out, "eval", args, [report_txt, report_csv])
    model, _, _, _ = load_checkpoint(args.ckpt)
    scenes = _load_split(args)[args.split]
    horizons = [int(h) for h in args.horizons.split(",")]
    samples = [int(s) for s in args.samples.split(",")]
    report = evaluate(model, scenes, horizons, sample_counts=samples,
                      seed=args.seed)
    lines = report.lines()
    if any(s.labels is not None and (s.labels >= 0).any() for s in scenes):
        rec = mode_recovery(model, scenes)
        lines.append(f"purity - {rec.purity:.6f}")
    for line in lines:
        print(line)
    with open(report_txt, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    with open(report_csv, "w") as fh:
        fh.write(report.to_csv())
    return 0


def _write_mode_tracks(path: str, scene, tracks_by_mode: dict,
                       agents=None) -> None:
    """CSV of per-mode predicted tracks and densities: one row per
    (agent, mode, step).  agents restricts the rows written; the arrays
    always carry the full scene."""
    rows = range(scene.num_agents) if agents is None else agents
    with open(path, "w") as fh:
        fh.write("scene_id,agent_id,mode,step,x,y,sigma_x,sigma_y,rho\n")
        for mode in sorted(tracks_by_mode):
            means, sigmas, rhos = tracks_by_mode[mode]
            for n in rows:
                for j in range(means.shape[1]):
                    fh.write(
                        f"{scene.scene_id},{scene.agent_ids[n]},{mode},{j},"
                        f"{means[n, j, 0]:.6f},{means[n, j, 1]:.6f},"
                        f"{sigmas[n, j, 0]:.6f},{sigmas[n, j, 1]:.6f},"
                        f"{rhos[n, j]:.6f}\n")


def _scene_file_tag(scene_id: str) -> str:
    return "".join(c if c.isalnum() else "_" for c in scene_id)


def cmd_predict(args) -> int:
    import numpy as np

    from .decoder import RolloutConfig, prior_probs, rollout
    from .training import load_checkpoint
    from .viz import scene_svg

    _write_manifest(args.out, "predict", args, [args.out])
    model, _, _, _ = load_checkpoint(args.ckpt)
    scenes = _pick_scenes(args, _load_split(args)[args.split])
    config = RolloutConfig(horizon=args.horizon)
    for scene in scenes:
        tag = _scene_file_tag(scene.scene_id)
        per_mode = {}
        for k in range(model.modes):
            res = rollout(model, scene,
                          np.full(scene.num_agents, k, dtype=np.int64),
                          config)
            per_mode[k] = (res.means, res.sigmas, res.rhos)
        _write_mode_tracks(
            os.path.join(args.out, f"predict_{tag}.csv"), scene, per_mode)
        probs = prior_probs(model, scene)
        with open(os.path.join(args.out, f"priors_{tag}.csv"), "w") as fh:
            fh.write("scene_id,agent_id,mode,prior\n")
            for n in range(scene.num_agents):
                for k in range(model.modes):
                    fh.write(f"{scene.scene_id},{scene.agent_ids[n]},{k},"
                             f"{probs[n, k]:.6f}\n")
        if args.plot:
            svg = scene_svg(scene, per_mode, title=scene.scene_id)
            with open(os.path.join(args.out, f"scene_{tag}.svg"), "w") as fh:
                fh.write(svg)
    print(f"predicted {len(scenes)} scenes into {args.out}")
    return 0


def cmd_hypo(args) -> int:
    import numpy as np

    from .decoder import conditional_rollout
    from .training import load_checkpoint
    from .viz import scene_svg

    _write_manifest(args.out, "hypo", args, [args.out])
    model, _, _, _ = load_checkpoint(args.ckpt)
    scenes = _pick_scenes(args, _load_split(args)[args.split])
    for scene in scenes:
        agent_row = int(np.searchsorted(scene.agent_ids, args.fix_agent))
        if (agent_row >= scene.num_agents
                or scene.agent_ids[agent_row] != args.fix_agent):
            raise ValueError(
                f"scene {scene.scene_id} has no agent {args.fix_agent}")
        if args.fixed_future:
            fixed = _read_track(args.fixed_future)
        else:
            fixed = scene.future[agent_row]
        cond = conditional_rollout(model, scene, agent_row, fixed)
        tag = _scene_file_tag(scene.scene_id)
        per_mode = {k: (cond.means[k], cond.sigmas[k], cond.rhos[k])
                    for k in range(cond.means.shape[0])}
        others = [n for n in range(scene.num_agents) if n != agent_row]
        _write_mode_tracks(os.path.join(args.out, f"hypo_{tag}.csv"),
                           scene, per_mode, agents=others)
        with open(os.path.join(args.out, f"fixed_{tag}.csv"), "w") as fh:
            fh.write("x,y\n")
            for x, y in fixed:
                fh.write(f"{x:.6f},{y:.6f}\n")
        if args.plot:
            svg = scene_svg(scene, per_mode, title=f"{scene.scene_id} hypo")
            with open(os.path.join(args.out, f"hypo_{tag}.svg"), "w") as fh:
                fh.write(svg)
    print(f"conditioned {len(scenes)} scenes into {args.out}")
    return 0


def _read_track(path: str):
    import numpy as np

    rows = []
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        if header[:2] != ["x", "y"]:
            raise ValueError(f"{path}: expected columns x,y")
        for i, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            try:
                rows.append((float(parts[0]), float(parts[1])))
            except (ValueError, IndexError):
                raise ValueError(f"{path}:{i}: malformed row {line!r}")
    if not rows:
        raise ValueError(f"{path}: no points")
    return np.asarray(rows)


def cmd_plan(args) -> int:
    from .planner import closed_loop_eval, task_for_regime
    from .training import load_checkpoint

    log_path = os.path.join(args.out, "plan.log")
    model = None
    if args.policy == "mfp":
        if not args.ckpt:
            print("error: --ckpt is required for the mfp policy",
                  file=sys.stderr)
            return 2
        model, _, _, _ = load_checkpoint(args.ckpt)
    _write_manifest(args.out, "plan", args, [log_path])
    task = task_for_regime(args.regime)
    report = closed_loop_eval(task, model, args.trials, seed=args.seed,
                              policy=args.policy)
    lines = report.lines()
    with open(log_path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    print(lines[-1])
    return 0


# ---------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mfp",
        description="multi-agent trajectory forecasting with latent modes")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, out_default):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default=out_default)

    def add_data(p):
        p.add_argument("--data", required=True,
                       help="trajectory CSV (scene_id,agent_id,frame,x,y)")
        p.add_argument("--labels", default=None,
                       help="label sidecar CSV (scene_id,agent_id,label)")
        p.add_argument("--rate", type=float, default=20.0,
                       help="frames per second of the trajectory file")
        p.add_argument("--split-seed", type=int, default=0)

    p = sub.add_parser("gen-data", help="generate the synthetic dataset")
    p.add_argument("--scenes", type=int, default=100)
    p.add_argument("--rate", type=float, default=20.0)
    add_common(p, "data")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model")
    add_data(p)
    p.add_argument("--modes", type=int, default=3)
    p.add_argument("--updates", type=int, default=6000)
    p.add_argument("--phase2", type=int, default=2000,
                   help="updates trained with interactive decoder inputs")
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--sigma-warmup", type=int, default=1000,
                   help="updates trained against a fixed decoder spread")
    p.add_argument("--val-every", type=int, default=250)
    p.add_argument("--checkpoint-every", type=int, default=1000)
    p.add_argument("--log-every", type=int, default=100)
    p.add_argument("--resume", action="store_true",
                   help="continue from the checkpoint in --out")
    add_common(p, "run")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="metric report on a data split")
    add_data(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--split", choices=("train", "val", "test", "all"),
                   default="test")
    p.add_argument("--horizons", default="1,5,10,15,19",
                   help="future step counts, comma separated")
    p.add_argument("--samples", default="5,6,12")
    add_common(p, "evalout")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="per-mode predicted tracks")
    add_data(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--split", choices=("train", "val", "test", "all"),
                   default="test")
    p.add_argument("--scene", default=None,
                   help="scene index or scene id (comma separated); "
                        "default: whole split")
    p.add_argument("--horizon", type=int, default=None)
    p.add_argument("--plot", action="store_true", help="emit SVG per scene")
    add_common(p, "predictions")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("hypo", help="condition on a fixed future")
    add_data(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--split", choices=("train", "val", "test", "all"),
                   default="test")
    p.add_argument("--scene", default=None)
    p.add_argument("--fix-agent", type=int, default=0,
                   help="agent id pinned to the fixed future")
    p.add_argument("--fixed-future", default=None,
                   help="CSV with columns x,y; default: the agent's "
                        "ground-truth future")
    p.add_argument("--plot", action="store_true")
    add_common(p, "hypo")
    p.set_defaults(func=cmd_hypo)

    p = sub.add_parser("plan", help="closed-loop planner trials")
    p.add_argument("--ckpt", default=None)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--regime",
                   choices=("nominal", "fast5", "fast10", "accel1"),
                   default="nominal")
    p.add_argument("--policy", choices=("mfp", "always_accel", "always_wait"),
                   default="mfp")
    add_common(p, "planout")
    p.set_defaults(func=cmd_plan)
    return parser


def main(argv=None) -> int:
    _apply_thread_cap()
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except Exception as exc:  # runtime failure -> exit 1 with a message
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
