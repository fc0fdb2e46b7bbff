"""The forecasting model: shared-weight history GRU per agent, RBF slot
attention over joint agent states, discrete per-agent latent modes, and a
GRU decoder emitting bivariate-normal steps.

All forward passes route through one batched rollout engine.  A rollout
plan describes independent rollout groups (each holding the full joint
state of the scene) and which (group, agent) slots are decoded versus
forced to ground truth or to a fixed hypothetical track.  Classmates
forcing, teacher forcing, interactive rollouts, joint sampling, and
hypothetical conditioning are all instances of the same plan shape, so the
gradient path is identical everywhere.

Decode-time frames: each agent's frame origin is refreshed every step from
its latest realized position, while the frame heading stays fixed at the
time-t estimate.  A heading refreshed from predicted displacements has a
singular gradient as displacements shrink (exactly the regime at random
init), so the rotation is constant per agent and only the translation is
live in the graph.  Instantaneous motion direction still reaches the
encoder through the rotated velocity features.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import diffcore as dc
from .autodiff import Var
from .encoder import FEATURE_DIM, EncoderConfig
from .geometry import estimate_heading, pov_transform, wrap_angle

PRED, GT, FIXED = 0, 1, 2


def init_params(modes: int, cfg: EncoderConfig, seed: int) -> dict:
    """Fresh parameter dict.  Weights uniform(+-1/sqrt(fan_in)), biases zero,
    slot keys standard normal.  Creation order is fixed so a seed pins every
    tensor bit-for-bit."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0]))
    u = dc.uniform_init
    p = {}
    h = cfg.enc_hidden
    p["enc_gru.wx"] = u(rng, 2, (2, 3 * h))
    p["enc_gru.wh_ru"] = u(rng, h, (h, 2 * h))
    p["enc_gru.wh_c"] = u(rng, h, (h, h))
    p["enc_gru.b"] = np.zeros(3 * h)
    kh = cfg.key_hidden
    p["key_net.w1"] = u(rng, FEATURE_DIM, (FEATURE_DIM, kh))
    p["key_net.b1"] = np.zeros(kh)
    p["key_net.w2"] = u(rng, kh, (kh, kh))
    p["key_net.b2"] = np.zeros(kh)
    p["key_head.w"] = u(rng, kh, (kh, cfg.key_dim))
    p["key_head.b"] = np.zeros(cfg.key_dim)
    p["val_head.w"] = u(rng, kh, (kh, cfg.dyn_out))
    p["val_head.b"] = np.zeros(cfg.dyn_out)
    p["slot_keys"] = rng.standard_normal((cfg.slots, cfg.key_dim))
    cat = cfg.slots * cfg.dyn_out + cfg.dyn_out
    p["slot_net.w1"] = u(rng, cat, (cat, cfg.slot_hidden))
    p["slot_net.b1"] = np.zeros(cfg.slot_hidden)
    p["slot_net.w2"] = u(rng, cfg.slot_hidden, (cfg.slot_hidden, cfg.dyn_out))
    p["slot_net.b2"] = np.zeros(cfg.dyn_out)
    fused = cfg.fused_dim
    p["prior.w"] = u(rng, fused, (fused, modes))
    p["prior.b"] = np.zeros(modes)
    dh = cfg.dec_hidden
    p["dec_init.w"] = u(rng, fused, (fused, dh))
    p["dec_init.b"] = np.zeros(dh)
    dec_in = cfg.dyn_out + modes + fused
    p["dec_gru.wx"] = u(rng, dec_in, (dec_in, 3 * dh))
    p["dec_gru.wh_ru"] = u(rng, dh, (dh, 2 * dh))
    p["dec_gru.wh_c"] = u(rng, dh, (dh, dh))
    p["dec_gru.b"] = np.zeros(3 * dh)
    p["head.w"] = u(rng, dh, (dh, 5))
    p["head.b"] = np.zeros(5)
    return {k: ad.param(v) for k, v in p.items()}


class Model:
    """Parameters plus every forward pass.  modes = K, the number of
    discrete futures per agent."""

    def __init__(self, modes: int, cfg: EncoderConfig | None = None,
                 seed: int = 0, params: dict | None = None,
                 mean_future: np.ndarray | None = None):
        if modes < 1:
            raise ValueError("modes must be >= 1")
        self.modes = modes
        self.cfg = cfg if cfg is not None else EncoderConfig()
        self.seed = seed
        self.params = params if params is not None else init_params(
            modes, self.cfg, seed)
        self.mean_future = (
            None if mean_future is None
            else np.asarray(mean_future, dtype=np.float64)
        )

    # -- parameter views ----------------------------------------------------

    def _gru(self, prefix: str) -> dc.GruParams:
        p = self.params
        return dc.GruParams(
            wx=p[f"{prefix}.wx"], wh_ru=p[f"{prefix}.wh_ru"],
            wh_c=p[f"{prefix}.wh_c"], b=p[f"{prefix}.b"],
        )

    def step_offsets(self, horizon: int) -> np.ndarray:
        """Per-step mean displacement targets in local frames, derived from
        the stored dataset-mean future ramp; beyond the stored horizon the
        last step repeats (constant-velocity continuation)."""
        if self.mean_future is None:
            return np.zeros((horizon, 2))
        ramp = self.mean_future
        steps = np.diff(np.vstack([np.zeros((1, 2)), ramp]), axis=0)
        if horizon <= steps.shape[0]:
            return steps[:horizon]
        extra = np.repeat(steps[-1:], horizon - steps.shape[0], axis=0)
        return np.vstack([steps, extra])

    # -- scene preprocessing -------------------------------------------------

    def scene_ctx(self, scene) -> "_SceneCtx":
        n = scene.num_agents
        past = scene.past
        headings = np.array([estimate_heading(past[i]) for i in range(n)])
        origins = past[:, -1].copy()
        pov_past = np.stack([
            pov_transform(past[i], _frame(origins[i], headings[i]))
            for i in range(n)
        ]) * self.cfg.feature_scale
        if scene.past_len >= 3:
            tail = past[:, -3:].copy()
        else:
            first = 2.0 * past[:, :1] - past[:, 1:2]  # zero-acceleration pad
            tail = np.concatenate([first, past], axis=1)
        return _SceneCtx(
            n_agents=n, dt=scene.dt, headings=headings,
            cos=np.cos(headings), sin=np.sin(headings),
            pov_past=pov_past, tail=tail, future=scene.future,
        )

    # -- encoding ------------------------------------------------------------

    def encode(self, ctx: "_SceneCtx") -> "_EncodeOut":
        p = self.params
        n = ctx.n_agents
        h = Var(np.zeros((n, self.cfg.enc_hidden)))
        gru = self._gru("enc_gru")
        for step in range(ctx.pov_past.shape[1]):
            h = dc.gru_step(Var(ctx.pov_past[:, step]), h, gru)
        layout = _build_layout(ctx, np.arange(n), np.zeros(n, dtype=np.int64))
        dyn = self._dyn_step(
            layout,
            Var(ctx.tail[:, 2].copy()), Var(ctx.tail[:, 1].copy()),
            Var(ctx.tail[:, 0].copy()), ctx.dt,
        )
        context = Var(np.zeros((n, self.cfg.context_dim)))
        f = ad.concat([h, dyn, context], axis=1)
        log_prior = ad.log_softmax_rows(ad.affine(f, p["prior.w"], p["prior.b"]))
        return _EncodeOut(h=h, dyn=dyn, f=f, log_prior=log_prior)

    # -- dynamic attention encoding (one joint-state step, batched) ----------

    def _dyn_step(self, lay: "_Layout", jc: Var, jc1: Var, jc2: Var,
                  dt: float) -> Var:
        p = self.params
        cfg = self.cfg
        scale = cfg.feature_scale
        vel = ad.mul(ad.sub(jc, jc1), Var(np.float64(scale / dt)))
        acc = ad.mul(
            ad.add(ad.sub(jc, ad.mul(Var(np.float64(2.0)), jc1)), jc2),
            Var(np.float64(scale / (dt * dt))),
        )
        p_nb = ad.gather_rows(jc, lay.nb_idx)
        p_ego = ad.gather_rows(jc, lay.ego_rep_idx)
        rel = ad.mul(
            ad.rot_into(ad.sub(p_nb, p_ego), lay.c_rep, lay.s_rep),
            Var(np.float64(scale)),
        )
        vel_r = ad.rot_into(ad.gather_rows(vel, lay.nb_idx), lay.c_rep, lay.s_rep)
        acc_r = ad.rot_into(ad.gather_rows(acc, lay.nb_idx), lay.c_rep, lay.s_rep)
        feat = ad.concat([rel, vel_r, acc_r, Var(lay.head_col)], axis=1)
        trunk = ad.relu(ad.affine(feat, p["key_net.w1"], p["key_net.b1"]))
        trunk = ad.relu(ad.affine(trunk, p["key_net.w2"], p["key_net.b2"]))
        keys = ad.affine(trunk, p["key_head.w"], p["key_head.b"])
        vals = ad.affine(trunk, p["val_head.w"], p["val_head.b"])
        sk = p["slot_keys"]
        k2 = ad.vsum(ad.mul(keys, keys), axis=1, keepdims=True)
        sk2 = ad.reshape(ad.vsum(ad.mul(sk, sk), axis=1), (1, cfg.slots))
        cross = ad.mul(Var(np.float64(-2.0)), ad.matmul(keys, ad.swap_last2(sk)))
        d2 = ad.add(ad.add(k2, cross), sk2)
        w = ad.exp(ad.mul(d2, Var(np.float64(-1.0 / cfg.temperature))))
        w = ad.mul(w, Var(lay.mask))
        b = lay.ego_agent.shape[0]
        wr = ad.reshape(w, (b, lay.n_agents, cfg.slots))
        vr = ad.reshape(vals, (b, lay.n_agents, cfg.dyn_out))
        slots = ad.reshape(
            ad.bmm(ad.swap_last2(wr), vr), (b, cfg.slots * cfg.dyn_out)
        )
        ego_val = ad.gather_rows(vals, lay.ego_feat_pos)
        cat = ad.concat([slots, ego_val], axis=1)
        hid = ad.relu(ad.affine(cat, p["slot_net.w1"], p["slot_net.b1"]))
        return ad.affine(hid, p["slot_net.w2"], p["slot_net.b2"])

    # -- rollout engine -------------------------------------------------------

    def run(self, scene, plan: "Plan") -> "EngineOut":
        ctx = self.scene_ctx(scene)
        enc = self.encode(ctx)
        return self.run_with(ctx, enc, plan)

    def run_with(self, ctx: "_SceneCtx", enc: "_EncodeOut",
                 plan: "Plan") -> "EngineOut":
        p = self.params
        n = ctx.n_agents
        horizon = plan.horizon
        b = plan.ego_agent.shape[0]
        lay = _build_layout(ctx, plan.ego_agent, plan.ego_group)
        gru = self._gru("dec_gru")

        needs_gt = plan.want_loglik or np.any(plan.sources == GT)
        if needs_gt and ctx.future.shape[1] < horizon:
            raise ValueError(
                f"horizon {horizon} exceeds available future "
                f"{ctx.future.shape[1]}"
            )

        # constant joint-state base per step: GT and fixed slots filled,
        # predicted slots zero until set_rows overwrites them
        base = np.zeros((horizon, plan.groups * n, 2))
        for g in range(plan.groups):
            for m in range(n):
                src = plan.sources[g, m]
                if src == GT:
                    base[:, g * n + m] = ctx.future[m, :horizon]
                elif src == FIXED:
                    track = plan.fixed_tracks[(g, m)]
                    base[:, g * n + m] = track[:horizon]

        offs = self.step_offsets(horizon)
        tgt = ctx.future[plan.ego_agent, :horizon] if plan.want_loglik else None

        h0_all = ad.affine(enc.f, p["dec_init.w"], p["dec_init.b"])
        hdec = ad.gather_rows(h0_all, plan.ego_agent)
        f_rows = ad.gather_rows(enc.f, plan.ego_agent)
        z = Var(plan.z_onehot)
        c_ego = np.cos(ctx.headings[plan.ego_agent])
        s_ego = np.sin(ctx.headings[plan.ego_agent])

        flat_pred = lay.flat_pred_idx
        feed = bool(plan.feed_back)
        tile = np.tile(ctx.tail[:, 2], (plan.groups, 1))
        jc = Var(tile)
        jc1 = Var(np.tile(ctx.tail[:, 1], (plan.groups, 1)))
        jc2 = Var(np.tile(ctx.tail[:, 0], (plan.groups, 1)))

        nll_total = None
        nll_steps = np.zeros((b, horizon))
        means = np.zeros((b, horizon, 2))
        sig_pov = np.zeros((b, horizon, 2))
        rho_pov = np.zeros((b, horizon))
        realized = np.zeros((b, horizon, 2))

        for j in range(horizon):
            e = self._dyn_step(lay, jc, jc1, jc2, ctx.dt)
            x = ad.concat([e, z, f_rows], axis=1)
            hdec = dc.gru_step(x, hdec, gru)
            raw = ad.affine(hdec, p["head.w"], p["head.b"])
            mu, sigma, rho = dc.constrain_columns(raw)
            if plan.sigma_override is not None:
                sigma = Var(np.full((b, 2), plan.sigma_override))
                rho = Var(np.zeros((b, 1)))
            mu_eff = ad.add(mu, Var(offs[j].reshape(1, 2)))
            origin = ad.gather_rows(jc, flat_pred)
            mu_w = ad.add(ad.rot_from(mu_eff, c_ego, s_ego), origin)

            if plan.want_loglik:
                tgt_pov = ad.rot_into(
                    ad.sub(Var(tgt[:, j].copy()), origin), c_ego, s_ego)
                nll_j = dc.nll_rows(mu_eff, sigma, rho, tgt_pov)
                nll_total = nll_j if nll_total is None else ad.add(
                    nll_total, nll_j)
                nll_steps[:, j] = nll_j.v[:, 0]

            means[:, j] = mu_w.v
            sig_pov[:, j] = sigma.v
            rho_pov[:, j] = rho.v[:, 0]

            if plan.feedback == "sample":
                eps = plan.rng.standard_normal((b, 2))
                sx, sy = sigma.v[:, 0], sigma.v[:, 1]
                r = rho.v[:, 0]
                dx = sx * eps[:, 0]
                dy = sy * (r * eps[:, 0] + np.sqrt(1.0 - r * r) * eps[:, 1])
                theta = ctx.headings[plan.ego_agent]
                cw, sw = np.cos(theta), np.sin(theta)
                samp = mu_w.v + np.stack(
                    [cw * dx - sw * dy, sw * dx + cw * dy], axis=-1)
                realized[:, j] = samp
                nxt = base[j].copy()
                nxt[flat_pred] = samp
                j_next = Var(nxt)
            else:
                realized[:, j] = mu_w.v
                if feed:
                    j_next = ad.set_rows(base[j], flat_pred, mu_w)
                else:
                    j_next = Var(base[j].copy())
            jc2, jc1, jc = jc1, jc, j_next

        loglik = None if nll_total is None else ad.neg(nll_total)
        sig_w, rho_w = _cov_to_world(sig_pov, rho_pov,
                                     ctx.headings[plan.ego_agent])
        return EngineOut(
            loglik=loglik, nll_steps=nll_steps, means=means,
            sigmas=sig_w, rhos=rho_w, realized=realized,
            log_prior=enc.log_prior, enc=enc, plan=plan, batch_rows=b,
        )

    # -- canonical forward passes ---------------------------------------------

    def mode_logliks(self, scene, forcing: str = "classmates",
                     horizon: int | None = None,
                     sigma_override: float | None = None) -> "ModeLogliks":
        """Per-agent, per-mode log-likelihood of the ground-truth future.

        classmates: each decoded agent feeds back its own predictions while
        every other agent is forced to ground truth, so the posterior
        factorizes exactly per agent and costs K rollouts, never K^N.
        teacher: every input comes from ground truth.
        """
        if forcing not in ("classmates", "teacher"):
            raise ValueError(f"unknown forcing {forcing!r}")
        n = scene.num_agents
        k = self.modes
        horizon = scene.future_len if horizon is None else horizon
        ego_agent = np.repeat(np.arange(n), k)
        ego_group = np.arange(n * k)
        z = np.zeros((n * k, k))
        z[np.arange(n * k), np.tile(np.arange(k), n)] = 1.0
        sources = np.full((n * k, n), GT, dtype=np.int8)
        if forcing == "classmates":
            sources[ego_group, ego_agent] = PRED
        plan = Plan(
            groups=n * k, ego_agent=ego_agent, ego_group=ego_group,
            z_onehot=z, sources=sources, feed_back=(forcing == "classmates"),
            horizon=horizon, want_loglik=True, sigma_override=sigma_override,
        )
        out = self.run(scene, plan)
        return ModeLogliks(
            log_prior=out.log_prior,
            loglik=ad.reshape(out.loglik, (n, k)),
            nll_steps=out.nll_steps.reshape(n, k, horizon),
            engine=out,
        )

    def shared_mode_logliks(self, scene, horizon: int | None = None,
                            sigma_override: float | None = None
                            ) -> "ModeLogliks":
        """Interactive variant: K joint rollouts, mode index shared by all
        agents, every agent feeding back its own predictions."""
        n = scene.num_agents
        k = self.modes
        horizon = scene.future_len if horizon is None else horizon
        ego_agent = np.tile(np.arange(n), k)
        ego_group = np.repeat(np.arange(k), n)
        z = np.zeros((k * n, k))
        z[np.arange(k * n), ego_group] = 1.0
        plan = Plan(
            groups=k, ego_agent=ego_agent, ego_group=ego_group,
            z_onehot=z, sources=np.full((k, n), PRED, dtype=np.int8),
            feed_back=True, horizon=horizon, want_loglik=True,
            sigma_override=sigma_override,
        )
        out = self.run(scene, plan)
        return ModeLogliks(
            log_prior=out.log_prior,
            loglik=ad.swap_last2(ad.reshape(out.loglik, (k, n))),
            nll_steps=out.nll_steps.reshape(k, n, horizon).transpose(1, 0, 2),
            engine=out,
        )


# ---------------------------------------------------------------------------
# supporting containers

@dataclass
class _SceneCtx:
    n_agents: int
    dt: float
    headings: np.ndarray
    cos: np.ndarray
    sin: np.ndarray
    pov_past: np.ndarray
    tail: np.ndarray          # (N,3,2) positions at t-2, t-1, t
    future: np.ndarray


@dataclass
class _EncodeOut:
    h: Var
    dyn: Var
    f: Var
    log_prior: Var


@dataclass
class _Layout:
    n_agents: int
    ego_agent: np.ndarray
    flat_pred_idx: np.ndarray
    nb_idx: np.ndarray
    ego_rep_idx: np.ndarray
    ego_feat_pos: np.ndarray
    mask: np.ndarray
    c_rep: np.ndarray
    s_rep: np.ndarray
    head_col: np.ndarray


def _build_layout(ctx: _SceneCtx, ego_agent: np.ndarray,
                  ego_group: np.ndarray) -> _Layout:
    n = ctx.n_agents
    b = ego_agent.shape[0]
    flat_pred = ego_group * n + ego_agent
    nb = (ego_group[:, None] * n + np.arange(n)[None, :]).reshape(-1)
    ego_rep = np.repeat(flat_pred, n)
    ego_feat_pos = np.arange(b) * n + ego_agent
    mask = np.ones((b * n, 1))
    mask[ego_feat_pos] = 0.0
    theta_e = ctx.headings[ego_agent]
    c_rep = np.repeat(np.cos(theta_e), n)
    s_rep = np.repeat(np.sin(theta_e), n)
    head = wrap_angle(
        np.tile(ctx.headings, b).reshape(b, n) - theta_e[:, None]
    ).reshape(-1, 1)
    return _Layout(
        n_agents=n, ego_agent=ego_agent, flat_pred_idx=flat_pred,
        nb_idx=nb, ego_rep_idx=ego_rep, ego_feat_pos=ego_feat_pos,
        mask=mask, c_rep=c_rep, s_rep=s_rep, head_col=head,
    )


@dataclass
class Plan:
    """One engine invocation: which (group, agent) slots are decoded, the
    mode one-hots per decoded row, and what every other slot is forced to."""

    groups: int
    ego_agent: np.ndarray
    ego_group: np.ndarray
    z_onehot: np.ndarray
    sources: np.ndarray
    horizon: int
    want_loglik: bool
    feed_back: bool = True
    feedback: str = "mean"
    rng: np.random.Generator | None = None
    fixed_tracks: dict = field(default_factory=dict)
    # decode against a fixed isotropic spread instead of the learned one
    # (the uncertainty head then gets no gradient); used to warm up the
    # mean pathway early in training
    sigma_override: float | None = None


@dataclass
class EngineOut:
    loglik: Var | None        # (B,1) total log-likelihood per decoded row
    nll_steps: np.ndarray     # (B,horizon) per-step NLL values
    means: np.ndarray         # (B,horizon,2) world-frame predicted means
    sigmas: np.ndarray        # (B,horizon,2) world-frame sigmas
    rhos: np.ndarray          # (B,horizon)
    realized: np.ndarray      # (B,horizon,2) fed-back realized points
    log_prior: Var
    enc: _EncodeOut
    plan: Plan
    batch_rows: int


@dataclass
class ModeLogliks:
    log_prior: Var            # (N,K)
    loglik: Var               # (N,K)
    nll_steps: np.ndarray     # (N,K,horizon)
    engine: EngineOut


def _frame(origin, heading):
    from .geometry import PovFrame

    return PovFrame(origin, heading)


def _cov_to_world(sig_pov: np.ndarray, rho_pov: np.ndarray,
                  theta: np.ndarray):
    """Rotate per-step covariance params into the world frame (values)."""
    c = np.cos(theta)[:, None]
    s = np.sin(theta)[:, None]
    sx2 = sig_pov[..., 0] ** 2
    sy2 = sig_pov[..., 1] ** 2
    oxy = rho_pov * sig_pov[..., 0] * sig_pov[..., 1]
    # rotation by +theta: R = [[c,-s],[s,c]], Sigma' = R Sigma R^T
    w00 = c * c * sx2 - 2.0 * c * s * oxy + s * s * sy2
    w11 = s * s * sx2 + 2.0 * c * s * oxy + c * c * sy2
    w01 = c * s * (sx2 - sy2) + (c * c - s * s) * oxy
    sx = np.sqrt(w00)
    sy = np.sqrt(w11)
    rho = np.clip(w01 / np.maximum(sx * sy, 1e-300), -1.0, 1.0)
    return np.stack([sx, sy], axis=-1), rho
