"""Differentiable building blocks: GRU cell, bivariate-normal output head,
Adam, and a finite-difference gradient checker.

Conventions are fixed here once and tested against scalar oracles:

  u = sigmoid(Wxu x + Whu h + bu)            update gate
  r = sigmoid(Wxr x + Whr h + br)            reset gate
  c = tanh(Wxc x + Whc (r*h) + bc)           candidate, reset applied to h
  h' = (1 - u) * h + u * c

so all-zero parameters give u = r = 0.5, c = 0 and h' = 0.5 h.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Var

LOG_SIGMA_CLAMP = 8.0
RHO_SCALE = 0.999


# ---------------------------------------------------------------------------
# initialization

def uniform_init(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


# ---------------------------------------------------------------------------
# GRU

@dataclass
class GruParams:
    """Gate weights packed as [reset | update | candidate] column blocks.

    wx: (input_dim, 3H), wh_ru: (H, 2H), wh_c: (H, H), b: (3H,).
    """

    wx: Var
    wh_ru: Var
    wh_c: Var
    b: Var

    @property
    def hidden(self) -> int:
        return self.wh_c.v.shape[0]


def gru_init(rng: np.random.Generator, input_dim: int, hidden: int) -> GruParams:
    return GruParams(
        wx=ad.param(uniform_init(rng, input_dim, (input_dim, 3 * hidden))),
        wh_ru=ad.param(uniform_init(rng, hidden, (hidden, 2 * hidden))),
        wh_c=ad.param(uniform_init(rng, hidden, (hidden, hidden))),
        b=ad.param(np.zeros(3 * hidden)),
    )


def gru_step(x: Var, h: Var, p: GruParams) -> Var:
    hid = p.hidden
    xg = ad.affine(x, p.wx, p.b)
    hg = ad.matmul(h, p.wh_ru)
    r = ad.sigmoid(ad.add(ad.cols(xg, 0, hid), ad.cols(hg, 0, hid)))
    u = ad.sigmoid(ad.add(ad.cols(xg, hid, 2 * hid), ad.cols(hg, hid, 2 * hid)))
    c = ad.tanh(ad.add(ad.cols(xg, 2 * hid, 3 * hid), ad.matmul(ad.mul(r, h), p.wh_c)))
    one_minus_u = ad.sub(ad.Var(np.float64(1.0)), u)
    return ad.add(ad.mul(one_minus_u, h), ad.mul(u, c))


# ---------------------------------------------------------------------------
# bivariate normal head

@dataclass
class BivariateNormalParams:
    """A 2-d Gaussian as (mu, sigma, rho); sigma strictly positive and
    |rho| <= 0.999 by construction of constrain_output."""

    mu: np.ndarray
    sigma: np.ndarray
    rho: float

    def cov(self) -> np.ndarray:
        sx, sy = self.sigma
        off = self.rho * sx * sy
        return np.array([[sx * sx, off], [off, sy * sy]])


def constrain_output(raw: np.ndarray) -> BivariateNormalParams:
    """Map a raw 5-vector to valid density parameters:
    mu = raw[0:2], sigma = exp(clamp(raw[2:4])), rho = 0.999 tanh(raw[4])."""
    raw = np.asarray(raw, dtype=np.float64)
    if raw.shape != (5,):
        raise ValueError("expected a raw 5-vector")
    mu = raw[0:2].copy()
    sigma = np.exp(np.clip(raw[2:4], -LOG_SIGMA_CLAMP, LOG_SIGMA_CLAMP))
    rho = RHO_SCALE * np.tanh(raw[4])
    return BivariateNormalParams(mu, sigma, float(rho))


def bivariate_nll(p: BivariateNormalParams, target) -> float:
    """Exact negative log density of target under the bivariate normal, nats."""
    target = np.asarray(target, dtype=np.float64)
    dx = (target[0] - p.mu[0]) / p.sigma[0]
    dy = (target[1] - p.mu[1]) / p.sigma[1]
    om = 1.0 - p.rho * p.rho
    quad = (dx * dx - 2.0 * p.rho * dx * dy + dy * dy) / (2.0 * om)
    norm = np.log(2.0 * np.pi * p.sigma[0] * p.sigma[1] * np.sqrt(om))
    return float(norm + quad)


def constrain_columns(raw: Var) -> tuple[Var, Var, Var]:
    """Batched graph version of constrain_output on (B,5) rows:
    returns mu (B,2), sigma (B,2), rho (B,1)."""
    mu = ad.cols(raw, 0, 2)
    sigma = ad.exp(ad.clip(ad.cols(raw, 2, 4), -LOG_SIGMA_CLAMP, LOG_SIGMA_CLAMP))
    rho = ad.mul(ad.Var(np.float64(RHO_SCALE)), ad.tanh(ad.cols(raw, 4, 5)))
    return mu, sigma, rho


def nll_rows(mu: Var, sigma: Var, rho: Var, target: Var) -> Var:
    """Row-wise bivariate NLL, (B,1).  Same formula as bivariate_nll."""
    z = ad.div(ad.sub(target, mu), sigma)
    zx = ad.cols(z, 0, 1)
    zy = ad.cols(z, 1, 2)
    om = ad.sub(ad.Var(np.float64(1.0)), ad.mul(rho, rho))
    quad = ad.div(
        ad.sub(
            ad.add(ad.mul(zx, zx), ad.mul(zy, zy)),
            ad.mul(ad.Var(np.float64(2.0)), ad.mul(rho, ad.mul(zx, zy))),
        ),
        ad.mul(ad.Var(np.float64(2.0)), om),
    )
    sx = ad.cols(sigma, 0, 1)
    sy = ad.cols(sigma, 1, 2)
    norm = ad.add(
        ad.add(ad.log(sx), ad.log(sy)),
        ad.add(
            ad.Var(np.float64(np.log(2.0 * np.pi))),
            ad.mul(ad.Var(np.float64(0.5)), ad.log(om)),
        ),
    )
    return ad.add(norm, quad)


# ---------------------------------------------------------------------------
# Adam

@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: dict, beta1: float = 0.9,
                   beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p.v) for k, p in params.items()},
            v={k: np.zeros_like(p.v) for k, p in params.items()},
            beta1=beta1, beta2=beta2, eps=eps,
        )


def adam_update(params: dict, grads: dict, state: AdamState, lr: float) -> None:
    """One in-place Adam step with bias correction.  lr = 0 leaves parameters
    bit-identical while still advancing the moments."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**state.step
    bc2 = 1.0 - b2**state.step
    for name, p in params.items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        if lr != 0.0:
            p.v -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


def clip_grad_norm(grads: dict, max_norm: float) -> float:
    """Scale all gradients so their joint L2 norm is at most max_norm.
    Returns the pre-clip norm."""
    total = 0.0
    for g in grads.values():
        total += float((g * g).sum())
    norm = float(np.sqrt(total))
    if norm > max_norm and norm > 0.0:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


# ---------------------------------------------------------------------------
# gradient checking

FD_STEP = 1e-5
FD_TOL = 1e-4


def grad_check_report(
    analytic: dict,
    loss_fn,
    params: dict,
    tolerance: float = FD_TOL,
    samples_per_block: int = 12,
    seed: int = 0,
    step: float = FD_STEP,
) -> dict:
    """Compare analytic gradients against central finite differences.

    For each parameter block a seeded sample of entries is probed with
    loss(p+h) - loss(p-h) over 2h; relative error is
    |analytic - numeric| / max(1, |numeric|).  Returns
    {block: {"max_rel_err": float, "ok": bool}} plus an "ok" aggregate under
    the key "__all__".
    """
    rng = np.random.default_rng(seed)
    report = {}
    all_ok = True
    for name in sorted(params):
        p = params[name]
        size = p.v.size
        k = min(samples_per_block, size)
        idx = rng.choice(size, size=k, replace=False)
        flat = p.v.reshape(-1)
        worst = 0.0
        for j in idx:
            keep = flat[j]
            flat[j] = keep + step
            up = loss_fn()
            flat[j] = keep - step
            down = loss_fn()
            flat[j] = keep
            numeric = (up - down) / (2.0 * step)
            a = analytic[name].reshape(-1)[j]
            rel = abs(a - numeric) / max(1.0, abs(numeric))
            if rel > worst:
                worst = rel
        ok = worst < tolerance
        all_ok = all_ok and ok
        report[name] = {"max_rel_err": worst, "ok": ok}
    report["__all__"] = {"ok": all_ok}
    return report


def grad_check(
    loss_builder,
    params: dict,
    tolerance: float = FD_TOL,
    samples_per_block: int = 12,
    seed: int = 0,
) -> dict:
    """Full check: run the tape once for analytic gradients, then probe each
    block with finite differences.  loss_builder() must rebuild the loss from
    the current parameter values (it is called both inside and outside a
    tape)."""
    with ad.Tape() as tape:
        loss = loss_builder()
        analytic = tape.gradients(loss, params)

    def value():
        out = loss_builder()
        return float(out.v) if isinstance(out, Var) else float(out)

    return grad_check_report(
        analytic, value, params, tolerance=tolerance,
        samples_per_block=samples_per_block, seed=seed,
    )
