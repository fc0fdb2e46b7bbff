"""Discrete latent-mode math.

Each agent draws one mode z in {0..K-1} at prediction time and keeps it for
the whole horizon.  Under classmates forcing the likelihood of agent n's
future depends only on its own z, so the posterior over modes factorizes
per agent and is available in closed form from K rollouts.

The EM-style loss treats the posterior as fixed values (no gradient flows
into the responsibilities) and combines the expected decoder NLL with
KL(posterior || prior).  With the exact posterior plugged in, the negative
of that objective equals the marginal log-likelihood, which is what the
training loop asserts.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Var


def _values(x) -> np.ndarray:
    return x.v if isinstance(x, Var) else np.asarray(x, dtype=np.float64)


def log_posterior(log_prior, loglik) -> np.ndarray:
    """Row-wise log posterior over modes: log softmax(log_prior + loglik)."""
    s = _values(log_prior) + _values(loglik)
    return s - ad.logsumexp_values(s, axis=1, keepdims=True)


def exact_posterior(log_prior, loglik) -> np.ndarray:
    """Per-agent posterior responsibilities (N,K), rows summing to one."""
    return np.exp(log_posterior(log_prior, loglik))


def marginal_loglik(log_prior, loglik) -> np.ndarray:
    """Per-agent marginal log-likelihood (N,): logsumexp_k of joint."""
    s = _values(log_prior) + _values(loglik)
    return ad.logsumexp_values(s, axis=1, keepdims=False)


def entropy(posterior: np.ndarray) -> float:
    """Shannon entropy summed over rows, with 0 log 0 = 0."""
    p = np.asarray(posterior, dtype=np.float64)
    return float(-np.sum(np.where(p > 0.0, p * np.log(np.where(p > 0.0, p, 1.0)), 0.0)))


def elbo(posterior: np.ndarray, log_prior, loglik) -> float:
    """Evidence lower bound at the given responsibilities (values only).

    sum_n sum_k q(k) [loglik + log_prior] + H(q).  Equals
    sum(marginal_loglik) exactly when q is the exact posterior.
    """
    q = np.asarray(posterior, dtype=np.float64)
    return float(np.sum(q * (_values(loglik) + _values(log_prior)))) + entropy(q)


def em_loss(posterior: np.ndarray, log_prior: Var, loglik: Var,
            norm: float) -> Var:
    """Training objective as a graph scalar.

    (sum_nk q . (-loglik)  +  KL(q || prior)) / norm, with q held constant.
    The first term trains encoder and decoder; the KL term is the only
    gradient path into the prior head.  norm is agents x horizon so the
    magnitude is a per-agent-step NLL.
    """
    if norm <= 0.0:
        raise ValueError("norm must be positive")
    q = Var(np.asarray(posterior, dtype=np.float64))
    nll_term = ad.vsum(ad.mul(q, ad.neg(loglik)))
    cross = ad.vsum(ad.mul(q, log_prior))
    neg_ent = Var(np.float64(-entropy(posterior)))
    return ad.mul(
        ad.add(nll_term, ad.sub(neg_ent, cross)),
        Var(np.float64(1.0 / norm)),
    )
