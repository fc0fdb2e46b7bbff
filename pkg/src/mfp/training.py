"""EM training loop and checkpointing.

Each update takes one scene.  The E step computes exact per-agent mode
posteriors from the classmates-forced log-likelihoods (values only); the M
step descends the expected NLL plus KL(posterior || prior), normalized per
agent-step.  Phase 1 trains with classmates forcing; phase 2 switches the
decoder inputs to fully interactive shared-mode rollouts (targets stay
ground truth) so the model it ships is the model it runs at prediction
time.  For the first sigma_warmup updates the decoder's spread is held
fixed so the mean pathway trains at full strength everywhere before the
uncertainty head starts reweighting the loss.

Reproducibility: the scene picked at update i depends only on (seed, i),
never on a running RNG, and checkpoint saves snap parameters and Adam
moments through float32 in place.  A run resumed from update U therefore
continues bit-for-bit like the run that never stopped, as long as both
save at U.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import diffcore as dc
from . import latent
from .encoder import EncoderConfig
from .geometry import compute_mean_future
from .model import Model


@dataclass
class TrainConfig:
    modes: int = 3
    seed: int = 0
    phase1_updates: int = 4000
    phase2_updates: int = 2000
    lr: float = 1e-3
    lr_decay: float = 0.1
    lr_decay_every: int = 3000
    lr_min: float = 5e-5
    clip_norm: float = 10.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    val_every: int = 250
    checkpoint_every: int = 1000
    log_every: int = 100
    horizon: int | None = None
    # per-agent forcing used during phase 1 (phase 2 is always interactive).
    # "teacher" feeds ground truth to every agent including self, which is
    # the ablation classmates forcing is usually compared against
    forcing: str = "classmates"
    # hold the decoder's spread fixed at sigma_init (correlation at zero)
    # for the first sigma_warmup updates.  Early in training the spread
    # head otherwise inflates exactly where the means are worst, which
    # mutes the mean gradient there and can leave slow-to-learn structure
    # (like one agent pacing another) permanently underfit
    sigma_warmup: int = 1000
    sigma_init: float = 0.5

    def __post_init__(self):
        if self.phase1_updates < 0 or self.phase2_updates < 0:
            raise ValueError("update counts must be >= 0")
        if self.lr <= 0 or self.lr_min <= 0 or self.lr_decay <= 0:
            raise ValueError("learning rates must be positive")
        if self.forcing not in ("classmates", "teacher"):
            raise ValueError(f"unknown phase-1 forcing {self.forcing!r}")
        if self.sigma_warmup < 0:
            raise ValueError("sigma_warmup must be >= 0")
        if self.sigma_init <= 0:
            raise ValueError("sigma_init must be positive")

    @property
    def total_updates(self) -> int:
        return self.phase1_updates + self.phase2_updates

    def lr_at(self, update: int) -> float:
        return max(self.lr * self.lr_decay ** (update // self.lr_decay_every),
                   self.lr_min)

    def phase_at(self, update: int) -> int:
        return 1 if update < self.phase1_updates else 2

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in (
            "modes", "seed", "phase1_updates", "phase2_updates", "lr",
            "lr_decay", "lr_decay_every", "lr_min", "clip_norm", "beta1",
            "beta2", "eps", "val_every", "checkpoint_every", "log_every",
            "horizon", "forcing", "sigma_warmup", "sigma_init")}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


class TrainingDiverged(RuntimeError):
    """Raised when the loss or a gradient stops being finite."""


def scene_loss(model: Model, scene, forcing: str = "classmates",
               horizon: int | None = None,
               sigma_override: float | None = None):
    """EM loss for one scene as a graph scalar, plus value-level stats.

    The posterior is computed from the current parameters and then held
    constant, so the returned loss equals the negative marginal
    log-likelihood (per agent-step) while its gradient is the EM gradient.
    sigma_override, when set, decodes against that fixed spread instead of
    the learned one (the spread-warmup path).
    """
    horizon = scene.future_len if horizon is None else horizon
    if forcing in ("classmates", "teacher"):
        ml = model.mode_logliks(scene, forcing=forcing, horizon=horizon,
                                sigma_override=sigma_override)
    elif forcing == "interactive":
        ml = model.shared_mode_logliks(scene, horizon=horizon,
                                       sigma_override=sigma_override)
    else:
        raise ValueError(f"unknown forcing {forcing!r}")
    post = latent.exact_posterior(ml.log_prior.v, ml.loglik.v)
    norm = scene.num_agents * horizon
    loss = latent.em_loss(post, ml.log_prior, ml.loglik, norm=norm)
    marginal = latent.marginal_loglik(ml.log_prior.v, ml.loglik.v)
    stats = {
        "nll": float(-marginal.sum() / norm),
        "posterior_entropy": latent.entropy(post) / scene.num_agents,
        "modes_used": int(np.unique(np.argmax(post, axis=1)).size),
    }
    return loss, stats


def dataset_mean_future(scenes) -> np.ndarray:
    """Mean local-frame future over every agent of every scene."""
    return compute_mean_future(scenes)


def validation_nll(model: Model, scenes, horizon: int | None = None) -> float:
    """Mean negative marginal log-likelihood per agent-step, classmates
    forcing, no tape."""
    total, norm = 0.0, 0
    for scene in scenes:
        h = scene.future_len if horizon is None else horizon
        ml = model.mode_logliks(scene, horizon=h)
        total -= latent.marginal_loglik(ml.log_prior.v, ml.loglik.v).sum()
        norm += scene.num_agents * h
    return float(total / norm)


@dataclass
class TrainResult:
    model: Model
    adam: dc.AdamState
    update: int
    history: list = field(default_factory=list)


def train(train_scenes, val_scenes, config: TrainConfig,
          model: Model | None = None, adam: dc.AdamState | None = None,
          start_update: int = 0, checkpoint_path: str | None = None,
          log=None) -> TrainResult:
    """Run (or continue) training to config.total_updates.

    checkpoint_path, if given, receives a checkpoint every
    config.checkpoint_every updates and at the end; each save first snaps
    parameters and Adam moments through float32 so resumed runs match
    continued ones exactly.
    """
    if not train_scenes:
        raise ValueError("no training scenes")
    if model is None:
        model = Model(modes=config.modes, seed=config.seed)
        model.mean_future = dataset_mean_future(train_scenes)
    if adam is None:
        adam = dc.AdamState.for_params(
            model.params, beta1=config.beta1, beta2=config.beta2,
            eps=config.eps)
    history = []
    for update in range(start_update, config.total_updates):
        rng = np.random.default_rng(
            np.random.SeedSequence([config.seed, 10, update]))
        scene = train_scenes[int(rng.integers(len(train_scenes)))]
        forcing = config.forcing if config.phase_at(update) == 1 else "interactive"
        sig_o = config.sigma_init if update < config.sigma_warmup else None
        with ad.Tape() as tape:
            loss, stats = scene_loss(model, scene, forcing, config.horizon,
                                     sigma_override=sig_o)
            if not np.isfinite(loss.v):
                raise TrainingDiverged(
                    f"non-finite loss {loss.v!r} at update {update}")
            grads = tape.gradients(loss, model.params)
        gnorm = dc.clip_grad_norm(grads, config.clip_norm)
        if not np.isfinite(gnorm):
            raise TrainingDiverged(f"non-finite gradient at update {update}")
        dc.adam_update(model.params, grads, adam, config.lr_at(update))

        row = {
            "update": update + 1, "phase": config.phase_at(update),
            "lr": config.lr_at(update), "loss": float(loss.v),
            "grad_norm": float(gnorm), **stats,
        }
        done = update + 1
        saving = checkpoint_path and (done % config.checkpoint_every == 0
                                      or done == config.total_updates)
        if saving:
            # snap before validating so the logged value is exactly what a
            # reload of this checkpoint reproduces
            snap_float32(model, adam)
        if val_scenes and (done % config.val_every == 0
                           or done == config.total_updates):
            row["val_nll"] = validation_nll(model, val_scenes, config.horizon)
        history.append(row)
        if log is not None and (done % config.log_every == 0
                                or done == config.total_updates):
            msg = (f"update={done:06d} phase={row['phase']} "
                   f"lr={row['lr']:.6f} loss={row['loss']:.6f} "
                   f"nll={row['nll']:.6f}")
            if "val_nll" in row:
                msg += f" val_nll={row['val_nll']:.6f}"
            log(msg)
        if saving:
            save_checkpoint(checkpoint_path, model, adam=adam, update=done,
                            train_config=config)
    if log is not None:
        log(f"trained updates={config.total_updates - start_update} "
            f"final_update={config.total_updates:06d}")
    return TrainResult(model=model, adam=adam,
                       update=config.total_updates, history=history)


# ---------------------------------------------------------------------------
# checkpoints

MAGIC = b"MFPC"
VERSION = 1


def snap_float32(model: Model, adam: dc.AdamState | None = None) -> None:
    """Round parameters (and Adam moments) through float32 in place, the
    same precision a checkpoint stores."""
    for p in model.params.values():
        p.v[...] = p.v.astype(np.float32).astype(np.float64)
    if model.mean_future is not None:
        model.mean_future = (
            model.mean_future.astype(np.float32).astype(np.float64))
    if adam is not None:
        for d in (adam.m, adam.v):
            for a in d.values():
                a[...] = a.astype(np.float32).astype(np.float64)


def save_checkpoint(path, model: Model, adam: dc.AdamState | None = None,
                    update: int = 0, train_config: TrainConfig | None = None
                    ) -> None:
    """Binary checkpoint: magic, version, JSON manifest, float32 blobs."""
    tensors: dict[str, np.ndarray] = {}
    for name, p in model.params.items():
        tensors[f"param.{name}"] = p.v
    if model.mean_future is not None:
        tensors["mean_future"] = model.mean_future
    if adam is not None:
        for name in model.params:
            tensors[f"adam.m.{name}"] = adam.m[name]
            tensors[f"adam.v.{name}"] = adam.v[name]
    tensors = dict(sorted(tensors.items()))  # canonical blob layout
    entries = {}
    offset = 0
    for name, arr in tensors.items():
        entries[name] = {"shape": list(arr.shape), "offset": offset}
        offset += arr.size
    manifest = {
        "format": "MFPC", "version": VERSION,
        "modes": model.modes, "seed": model.seed,
        "encoder_config": model.cfg.to_dict(),
        "update": update,
        "adam": None if adam is None else {
            "step": adam.step, "beta1": adam.beta1, "beta2": adam.beta2,
            "eps": adam.eps},
        "train_config": None if train_config is None else train_config.to_dict(),
        "tensors": entries,
    }
    payload = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", len(payload)))
        fh.write(payload)
        for arr in tensors.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_checkpoint(path):
    """Read a checkpoint back.  Returns (model, adam, update, manifest);
    adam is None when the checkpoint carries no optimizer state."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise ValueError(f"{path}: not a model checkpoint")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version "
                             f"{version}, this build reads version {VERSION}")
        (mlen,) = struct.unpack("<Q", fh.read(8))
        manifest = json.loads(fh.read(mlen).decode("utf-8"))
        blob = fh.read()
    data = np.frombuffer(blob, dtype="<f4").astype(np.float64)
    tensors = {}
    for name, entry in manifest["tensors"].items():
        shape = tuple(entry["shape"])
        size = int(np.prod(shape)) if shape else 1
        tensors[name] = data[entry["offset"]:entry["offset"] + size].reshape(shape).copy()
    cfg = EncoderConfig.from_dict(manifest["encoder_config"])
    params = {name[len("param."):]: ad.param(arr)
              for name, arr in tensors.items() if name.startswith("param.")}
    model = Model(modes=manifest["modes"], cfg=cfg, seed=manifest["seed"],
                  params=params, mean_future=tensors.get("mean_future"))
    adam = None
    if manifest["adam"] is not None:
        spec = manifest["adam"]
        adam = dc.AdamState(
            m={k: tensors[f"adam.m.{k}"] for k in params},
            v={k: tensors[f"adam.v.{k}"] for k in params},
            step=int(spec["step"]), beta1=spec["beta1"],
            beta2=spec["beta2"], eps=spec["eps"],
        )
    return model, adam, int(manifest["update"]), manifest
