"""The new skill: a Gaussian policy distilled from the low-level replay view
by advantage-weighted regression (exp-clipped), with an optional blend
toward the EM policy-optimisation update used by the baselines.

The learner never reads scheduler fields: batches are plain
(s, a, r, s', done) rows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .baselines import MpoConfig, MpoLearner
from .errors import ConfigurationError, NumericalAbort
from .numerics import CHECKPOINT_FORMAT_VERSION, adam_step, mlp_from_doc, mlp_to_doc
from .policies import GaussianPolicy


@dataclass
class NewSkillConfig:
    gamma: float = 0.99
    lr: float = 3e-4
    beta: float = 1.0            # advantage inverse temperature
    m_advantage: int = 4         # policy samples for the advantage baseline
    w_max: float = 20.0          # exp-weight clip
    alpha: float = 1.0           # 1 = pure advantage-weighted regression
    hidden: tuple = (64, 64)
    eps_estep: float = 0.1
    eps_mean: float = 5e-3
    eps_cov: float = 1e-5
    m_proposal: int = 20
    target_policy_period: int = 25
    target_critic_period: int = 100

    def mpo(self) -> MpoConfig:
        return MpoConfig(gamma=self.gamma, lr=self.lr, eps_estep=self.eps_estep,
                         eps_mean=self.eps_mean, eps_cov=self.eps_cov,
                         m_proposal=self.m_proposal,
                         m_bootstrap=self.m_advantage, hidden=self.hidden,
                         target_policy_period=self.target_policy_period,
                         target_critic_period=self.target_critic_period)


class NewSkillLearner:
    """Owns the trainable policy and its scalar (s, a) critic.

    The update machinery (critic TD, E/M steps, trust regions, Adam) is the
    embedded MpoLearner's; the advantage-weighted path only adds its own
    weighting of the log-likelihood gradient, so alpha = 0 reproduces the
    baseline update bit for bit.
    """

    def __init__(self, state_dim: int, action_dim: int, cfg: NewSkillConfig,
                 rng: np.random.Generator):
        if not 0.0 <= cfg.alpha <= 1.0:
            raise ConfigurationError("alpha outside [0, 1]")
        if cfg.m_advantage < 2 or cfg.w_max < 1.0 or cfg.beta <= 0:
            raise ConfigurationError("bad advantage-weighting parameters")
        self.cfg = cfg
        self.core = MpoLearner(state_dim, action_dim, cfg.mpo(), rng)
        self.policy = self.core.policy

    @property
    def critic(self):
        return self.core.critic

    def q_values(self, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
        q, _ = self.core.q_batch(self.core.critic, states, actions)
        return q

    def advantage(self, states: np.ndarray, actions: np.ndarray,
                  rng: np.random.Generator) -> np.ndarray:
        """A(s, a) = Q(s, a) - mean_j Q(s, a_j), a_j from the online policy."""
        b, m = states.shape[0], self.cfg.m_advantage
        q_sa = self.q_values(states, actions)
        a_j = self.policy.sample_batch(states, rng, n=m)
        q_j = self.q_values(np.repeat(states, m, axis=0), a_j.reshape(b * m, -1))
        return q_sa - q_j.reshape(b, m).mean(axis=1)

    def crr_weights(self, advantages: np.ndarray) -> np.ndarray:
        return np.minimum(self.cfg.w_max, np.exp(advantages / self.cfg.beta))

    def crr_policy_loss(self, states, actions, weights) -> float:
        """-mean(w * log pi(a|s)); weights are treated as constants."""
        lp = self.policy.log_prob_batch(states, actions)
        return -float(np.mean(weights * lp))

    def critic_update(self, batch, rng: np.random.Generator) -> float:
        return self.core.critic_update(batch, rng)

    def policy_update(self, batch, rng: np.random.Generator) -> dict:
        """alpha-blend of the advantage-weighted and EM updates."""
        alpha = self.cfg.alpha
        states, actions = batch["s"], batch["a"]
        tape = self.core._policy_tapes["net"]
        tape.zero()
        losses = {}
        kls = []
        if alpha > 0.0:
            adv = self.advantage(states, actions, rng)
            w = self.crr_weights(adv)
            lp, aux = self.policy.log_prob_with_aux(states, actions)
            loss_crr = -float(np.mean(w * lp))
            self.policy.backward_weighted(aux, -alpha * w / len(w), tape)
            losses["crr"] = loss_crr
        if alpha < 1.0:
            a_prop, ew, _ = self.core.e_step(states, rng)
            b, m = ew.shape
            scale = 1.0 - alpha
            nll = self.core._weighted_nll_backward(
                np.repeat(states, m, axis=0), a_prop.reshape(b * m, -1),
                scale * ew.reshape(b * m), b) / scale
            kls = self.core._trust_region_backward(states, scale=scale)
            losses["mpo"] = nll + sum(lam * k for _, lam, k in kls)
        total = alpha * losses.get("crr", 0.0) + (1 - alpha) * losses.get("mpo", 0.0)
        if not np.isfinite(total):
            raise NumericalAbort("new-skill policy loss is not finite")
        self.core._apply_policy_grads()
        if kls:
            self.core._update_trust_regions(kls)
        self.core.n_policy_updates += 1
        if self.core.n_policy_updates % self.cfg.target_policy_period == 0:
            self.core._sync_target_policy()
        losses["total"] = total
        return losses

    # -- evaluation & checkpointing -----------------------------------------

    def greedy_action(self, state: np.ndarray) -> np.ndarray:
        return self.policy.mean_action(state)

    def to_doc(self) -> dict:
        return {
            "format_version": CHECKPOINT_FORMAT_VERSION,
            "policy_kind": "gaussian",
            "action_dim": self.policy.action_dim,
            "sizes": list(self.policy.net.sizes),
            "params": self.policy.net.params.tolist(),
            "critic": mlp_to_doc(self.core.critic),
        }
