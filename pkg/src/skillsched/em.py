"""Shared E/M machinery: the temperature dual and trust-region multipliers.

The E-step reweights proposal actions by exp(Q/eta*) where eta* minimizes
g(eta) = eta*eps + eta * mean_states log sum_actions prior * exp(Q/eta).
The same dual covers the exact categorical case (prior = policy masses over
the enumerated joint actions) and the sampled Gaussian case (prior = uniform
over proposal samples).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .policies import log_softmax

log = logging.getLogger(__name__)

ETA_LO = 1e-6
ETA_HI = 1e3
BISECT_ITERS = 100


def dual_value(eta: float, q_values: np.ndarray, log_prior: np.ndarray,
               eps: float) -> float:
    """g(eta) averaged over the batch axis (rows = states)."""
    a = log_prior + q_values / eta
    m = np.max(a, axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.sum(np.exp(a - m), axis=1))
    return float(eta * eps + eta * np.mean(lse))


def mean_kl_at(eta: float, q_values: np.ndarray, log_prior: np.ndarray) -> float:
    """Batch-mean KL(q_eta || prior); equals eps - dg/deta."""
    lw = log_softmax(log_prior + q_values / eta, axis=1)
    w = np.exp(lw)
    return float(np.mean(np.sum(w * (lw - log_prior), axis=1)))


def solve_temperature(q_values: np.ndarray, log_prior: np.ndarray, eps: float,
                      lo: float = ETA_LO, hi: float = ETA_HI,
                      iters: int = BISECT_ITERS) -> float:
    """Minimize the dual via its stationarity condition mean KL(eta) = eps.

    dg/deta = eps - mean KL, and KL is monotone decreasing in eta, so the
    minimizer is the root when one exists in [lo, hi] and is pinned at the
    matching bound otherwise. Bisection on log eta keeps the solution a
    Lipschitz function of Q, which a direct value-comparison search of the
    flat dual minimum cannot (that caps argmin precision near sqrt(eps)).
    """
    if mean_kl_at(lo, q_values, log_prior) <= eps:
        log.debug("temperature dual pinned at lower bound %.2g", lo)
        return lo
    if mean_kl_at(hi, q_values, log_prior) > eps:
        log.debug("temperature dual pinned at upper bound %.2g", hi)
        return hi
    a, b = math.log(lo), math.log(hi)
    for _ in range(iters):
        mid = 0.5 * (a + b)
        if mean_kl_at(math.exp(mid), q_values, log_prior) > eps:
            a = mid
        else:
            b = mid
    return math.exp(0.5 * (a + b))


def estep_weights(q_values: np.ndarray, log_prior: np.ndarray, eps: float):
    """Per-row normalized weights prop. to prior * exp(Q/eta*), plus eta*.

    Q is centered per row first: the weights and the dual minimizer are
    shift-invariant, and centering makes that exact in floating point.
    """
    q_c = q_values - np.max(q_values, axis=1, keepdims=True)
    eta = solve_temperature(q_c, log_prior, eps)
    return np.exp(log_softmax(log_prior + q_c / eta, axis=1)), eta


@dataclass
class TrustRegion:
    """Lagrangian multiplier with multiplicative adaptation."""

    eps: float
    multiplier: float = 1.0
    grow: float = 1.02
    lo: float = 1e-6
    hi: float = 1e6

    def update(self, kl: float) -> None:
        if kl > self.eps:
            self.multiplier = min(self.multiplier * self.grow, self.hi)
        else:
            self.multiplier = max(self.multiplier / self.grow, self.lo)
