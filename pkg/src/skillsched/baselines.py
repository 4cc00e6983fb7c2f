"""Comparison learners sharing the numerics/policies/replay stack.

- MpoLearner: EM-style off-policy optimisation from scratch (Gaussian or
  mixture policy, scalar critic).
- KlRegLearner: same E/M machinery with a frozen uniform skill mixture as
  the proposal distribution.
- DaggerLearner: student imitates the teacher mixture on its own state
  distribution, optionally blended with the RL objective.
- rhpo_reload: rebuild a mixture from skill checkpoints, frozen or
  fine-tunable, with an optional fresh trainable component.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import em
from .errors import ConfigurationError, NumericalAbort
from .numerics import AdamState, GradTape, Mlp, adam_step
from .policies import (GaussianPolicy, MixturePolicy, categorical_kl,
                       gaussian_kl, log_softmax, policy_from_doc, softmax,
                       uniform_mixture)


@dataclass
class MpoConfig:
    gamma: float = 0.99
    lr: float = 3e-4
    eps_estep: float = 0.1
    eps_mean: float = 5e-3
    eps_cov: float = 1e-5
    eps_cat: float = 5e-3          # mixture categorical head trust region
    m_proposal: int = 20           # E-step action samples per state
    m_bootstrap: int = 4           # critic bootstrap samples
    hidden: tuple = (64, 64)
    target_policy_period: int = 25
    target_critic_period: int = 100


def sampled_estep_weights(q_values: np.ndarray, eps: float):
    """E-step weights over proposal samples (uniform log-prior)."""
    log_prior = np.full_like(q_values, -math.log(q_values.shape[1]))
    return em.estep_weights(q_values, log_prior, eps)


def _gaussian_trust_backward(policy: GaussianPolicy, target: GaussianPolicy,
                             states: np.ndarray, lam_mean: float,
                             lam_cov: float, tape: GradTape):
    """Add decoupled-KL penalty gradients; returns (kl_mean, kl_cov).

    KL(target || online): the mean part is evaluated under the online
    covariance, so its gradient carries a log-std term too.
    """
    mean, std, mask, cache = policy.mean_std_batch(states)
    t_mean, t_std, _, _ = target.mean_std_batch(states)
    b = states.shape[0]
    kl_mean, kl_cov = gaussian_kl(t_mean, t_std, mean, std)
    delta2 = ((t_mean - mean) / std) ** 2
    ratio2 = (t_std / std) ** 2
    dmean = lam_mean * (mean - t_mean) / (std * std) / b
    dlogstd = (lam_cov * (1.0 - ratio2) - lam_mean * delta2) * mask / b
    policy.net.backward_batch(cache, np.concatenate([dmean, dlogstd], axis=1), tape)
    return float(np.mean(kl_mean)), float(np.mean(kl_cov))


class MpoLearner:
    """EM policy optimisation with a scalar (state, action) critic."""

    def __init__(self, state_dim: int, action_dim: int, cfg: MpoConfig,
                 rng: np.random.Generator, policy=None):
        self.cfg = cfg
        self.state_dim, self.action_dim = state_dim, action_dim
        self.policy = policy or GaussianPolicy.create(
            state_dim, action_dim, cfg.hidden, rng, zero_final=True)
        self.critic = Mlp.create((state_dim + action_dim, *cfg.hidden, 1), rng,
                                 zero_final=True)
        self.target_policy = self._copy_policy(self.policy)
        self.target_critic = self.critic.copy()
        self._critic_tape = GradTape(self.critic)
        self._critic_adam = AdamState.for_net(self.critic, cfg.lr)
        self._policy_tapes, self._policy_adams = self._make_policy_state()
        self.tr_mean = em.TrustRegion(cfg.eps_mean)
        self.tr_cov = em.TrustRegion(cfg.eps_cov)
        self.tr_cat = em.TrustRegion(cfg.eps_cat)
        self.n_policy_updates = 0
        self.n_critic_updates = 0

    # -- policy parameter plumbing (gaussian or mixture) ---------------------

    @staticmethod
    def _copy_policy(policy):
        if isinstance(policy, GaussianPolicy):
            return policy.copy()
        return MixturePolicy([c.copy() for c in policy.components],
                             list(policy.frozen),
                             policy.head.copy() if policy.head else None)

    def _make_policy_state(self):
        if isinstance(self.policy, GaussianPolicy):
            return ({"net": GradTape(self.policy.net)},
                    {"net": AdamState.for_net(self.policy.net, self.cfg.lr)})
        tapes, adams = {}, {}
        for ci, comp in enumerate(self.policy.components):
            if not self.policy.frozen[ci]:
                tapes[f"comp{ci}"] = GradTape(comp.net)
                adams[f"comp{ci}"] = AdamState.for_net(comp.net, self.cfg.lr)
        if self.policy.head is not None:
            tapes["head"] = GradTape(self.policy.head)
            adams["head"] = AdamState.for_net(self.policy.head, self.cfg.lr)
        return tapes, adams

    def _zero_tapes(self):
        for t in self._policy_tapes.values():
            t.zero()

    def _apply_policy_grads(self):
        if isinstance(self.policy, GaussianPolicy):
            adam_step(self.policy.net.params, self._policy_tapes["net"],
                      self._policy_adams["net"])
            return
        for ci, comp in enumerate(self.policy.components):
            key = f"comp{ci}"
            if key in self._policy_tapes:
                adam_step(comp.net.params, self._policy_tapes[key],
                          self._policy_adams[key])
        if "head" in self._policy_tapes:
            adam_step(self.policy.head.params, self._policy_tapes["head"],
                      self._policy_adams["head"])

    def _sync_target_policy(self):
        if isinstance(self.policy, GaussianPolicy):
            self.target_policy.net.load_params(self.policy.net.params)
        else:
            for tc, oc in zip(self.target_policy.components, self.policy.components):
                tc.net.load_params(oc.net.params)
            if self.policy.head is not None:
                self.target_policy.head.load_params(self.policy.head.params)

    # -- critic ---------------------------------------------------------------

    def q_batch(self, critic: Mlp, states: np.ndarray, actions: np.ndarray):
        x = np.concatenate([states, actions], axis=1)
        y, cache = critic.forward_batch(x)
        return y[:, 0], cache

    def critic_update(self, batch, rng: np.random.Generator) -> float:
        s, a, r = batch["s"], batch["a"], batch["r"]
        s_next, done = batch["s_next"], batch["done"]
        m = self.cfg.m_bootstrap
        a_next = self.target_policy.sample_batch(s_next, rng, n=m)
        b = s.shape[0]
        q_next, _ = self.q_batch(self.target_critic,
                                 np.repeat(s_next, m, axis=0),
                                 a_next.reshape(b * m, -1))
        v_next = q_next.reshape(b, m).mean(axis=1)
        target = r + self.cfg.gamma * np.where(done, 0.0, v_next)
        q, cache = self.q_batch(self.critic, s, a)
        err = q - target
        loss = float(np.mean(err ** 2))
        if not np.isfinite(loss):
            raise NumericalAbort("critic loss is not finite")
        self._critic_tape.zero()
        self.critic.backward_batch(cache, (2.0 / b) * err[:, None], self._critic_tape)
        adam_step(self.critic.params, self._critic_tape, self._critic_adam)
        self.n_critic_updates += 1
        if self.n_critic_updates % self.cfg.target_critic_period == 0:
            self.target_critic.load_params(self.critic.params)
        return loss

    # -- E-step ----------------------------------------------------------------

    def proposal_policy(self):
        """Distribution the E-step samples actions from."""
        return self.target_policy

    def e_step(self, states: np.ndarray, rng: np.random.Generator):
        """Sample proposal actions and weight them by exp(Q/eta*)."""
        m = self.cfg.m_proposal
        b = states.shape[0]
        actions = self.proposal_policy().sample_batch(states, rng, n=m)
        q, _ = self.q_batch(self.target_critic, np.repeat(states, m, axis=0),
                            actions.reshape(b * m, -1))
        q = q.reshape(b, m)
        weights, eta = sampled_estep_weights(q, self.cfg.eps_estep)
        return actions, weights, eta

    # -- M-step ----------------------------------------------------------------

    def m_step(self, states: np.ndarray, actions: np.ndarray,
               weights: np.ndarray) -> float:
        """Weighted max-likelihood under decoupled trust regions."""
        b, m = weights.shape
        s_rep = np.repeat(states, m, axis=0)
        a_flat = actions.reshape(b * m, -1)
        w_flat = weights.reshape(b * m)
        self._zero_tapes()
        loss = self._weighted_nll_backward(s_rep, a_flat, w_flat, b)
        kls = self._trust_region_backward(states)
        if not np.isfinite(loss):
            raise NumericalAbort("policy loss is not finite")
        self._apply_policy_grads()
        self._update_trust_regions(kls)
        self.n_policy_updates += 1
        if self.n_policy_updates % self.cfg.target_policy_period == 0:
            self._sync_target_policy()
        return loss + sum(lam * kl for _, lam, kl in kls)

    def _weighted_nll_backward(self, s_rep, a_flat, w_flat, b) -> float:
        if isinstance(self.policy, GaussianPolicy):
            lp, aux = self.policy.log_prob_with_aux(s_rep, a_flat)
            self.policy.backward_weighted(aux, -w_flat / b,
                                          self._policy_tapes["net"])
        else:
            lp, aux = self.policy.log_prob_with_aux(s_rep, a_flat)
            comp_tapes = [self._policy_tapes.get(f"comp{ci}")
                          for ci in range(self.policy.n_components)]
            self.policy.backward_weighted(aux, -w_flat / b, comp_tapes,
                                          self._policy_tapes.get("head"))
        return -float(np.sum(w_flat * lp) / b)

    def _trust_region_backward(self, states, scale: float = 1.0):
        """Accumulate KL penalty gradients scaled by `scale`.

        Returns [(kind, raw lambda, kl), ...]; the penalty's contribution to
        a blended loss is scale * sum(lambda * kl).
        """
        kls = []
        if isinstance(self.policy, GaussianPolicy):
            km, kc = _gaussian_trust_backward(
                self.policy, self.target_policy, states,
                scale * self.tr_mean.multiplier, scale * self.tr_cov.multiplier,
                self._policy_tapes["net"])
            return [("mean", self.tr_mean.multiplier, km),
                    ("cov", self.tr_cov.multiplier, kc)]
        for ci, comp in enumerate(self.policy.components):
            key = f"comp{ci}"
            if key not in self._policy_tapes:
                continue
            km, kc = _gaussian_trust_backward(
                comp, self.target_policy.components[ci], states,
                scale * self.tr_mean.multiplier, scale * self.tr_cov.multiplier,
                self._policy_tapes[key])
            kls.append(("mean", self.tr_mean.multiplier, km))
            kls.append(("cov", self.tr_cov.multiplier, kc))
        if self.policy.head is not None:
            logits, cache = self.policy.head.forward_batch(states)
            t_logits, _ = self.target_policy.head.forward_batch(states)
            b = states.shape[0]
            pi = softmax(logits, axis=1)
            tpi = softmax(t_logits, axis=1)
            kl = float(np.mean(np.sum(
                tpi * (log_softmax(t_logits, axis=1) - log_softmax(logits, axis=1)),
                axis=1)))
            lam = self.tr_cat.multiplier
            self.policy.head.backward_batch(cache, scale * lam * (pi - tpi) / b,
                                            self._policy_tapes["head"])
            kls.append(("cat", lam, kl))
        return kls

    def _update_trust_regions(self, kls):
        by_kind = {}
        for kind, _, kl in kls:
            by_kind.setdefault(kind, []).append(kl)
        if "mean" in by_kind:
            self.tr_mean.update(max(by_kind["mean"]))
        if "cov" in by_kind:
            self.tr_cov.update(max(by_kind["cov"]))
        if "cat" in by_kind:
            self.tr_cat.update(max(by_kind["cat"]))

    def policy_update(self, batch, rng: np.random.Generator) -> float:
        actions, weights, _ = self.e_step(batch["s"], rng)
        return self.m_step(batch["s"], actions, weights)


def mpo_e_step(learner: MpoLearner, states: np.ndarray, rng) :
    """Op form: per-state proposal actions, normalized weights, eta*."""
    return learner.e_step(states, rng)


def mpo_m_step(learner: MpoLearner, states, actions, weights) -> float:
    return learner.m_step(states, actions, weights)


class KlRegLearner(MpoLearner):
    """MPO with a frozen uniform skill mixture as the E-step proposal."""

    def __init__(self, state_dim, action_dim, cfg, rng, prior: MixturePolicy,
                 policy=None):
        super().__init__(state_dim, action_dim, cfg, rng, policy=policy)
        if not all(prior.frozen):
            raise ConfigurationError("prior mixture must be fully frozen")
        self.prior = prior

    def proposal_policy(self):
        return self.prior


def klreg_e_step(learner: KlRegLearner, states, rng):
    return learner.e_step(states, rng)


class DaggerLearner:
    """Student distills the teacher mixture on its own rollouts; the RL term
    is an embedded MpoLearner blended with weight (1 - alpha)."""

    def __init__(self, state_dim, action_dim, cfg: MpoConfig, rng,
                 teacher: MixturePolicy, alpha_dagger: float = 1.0,
                 m_teacher: int = 10):
        if not 0.0 <= alpha_dagger <= 1.0:
            raise ConfigurationError("alpha_dagger outside [0, 1]")
        self.cfg = cfg
        self.teacher = teacher
        self.alpha = alpha_dagger
        self.m_teacher = m_teacher
        self.rl = MpoLearner(state_dim, action_dim, cfg, rng)
        self.policy = self.rl.policy  # the student

    def critic_update(self, batch, rng) -> float:
        return self.rl.critic_update(batch, rng)

    def dagger_loss_backward(self, states, rng, scale: float, tape) -> float:
        """Cross-entropy to teacher samples; returns the loss term."""
        m = self.m_teacher
        b = states.shape[0]
        a_teacher = self.teacher.sample_batch(states, rng, n=m)
        s_rep = np.repeat(states, m, axis=0)
        lp, aux = self.policy.log_prob_with_aux(s_rep, a_teacher.reshape(b * m, -1))
        w = np.full(b * m, 1.0 / (b * m))
        self.policy.backward_weighted(aux, -scale * w, tape)
        return -float(np.mean(lp))

    def policy_update(self, batch, rng) -> float:
        """alpha * imitation + (1 - alpha) * RL objective."""
        states = batch["s"]
        if self.alpha == 0.0:
            return self.rl.policy_update(batch, rng)
        if self.alpha == 1.0:
            tape = self.rl._policy_tapes["net"]
            tape.zero()
            loss = self.dagger_loss_backward(states, rng, 1.0, tape)
            if not np.isfinite(loss):
                raise NumericalAbort("imitation loss is not finite")
            self.rl._apply_policy_grads()
            return loss
        tape = self.rl._policy_tapes["net"]
        tape.zero()
        l_im = self.dagger_loss_backward(states, rng, self.alpha, tape)
        actions, weights, _ = self.rl.e_step(states, rng)
        b, m = weights.shape
        rl_scale = 1.0 - self.alpha
        l_nll = self.rl._weighted_nll_backward(
            np.repeat(states, m, axis=0), actions.reshape(b * m, -1),
            rl_scale * weights.reshape(b * m), b) / rl_scale
        kls = self.rl._trust_region_backward(states, scale=rl_scale)
        l_rl = l_nll + sum(lam * k for _, lam, k in kls)
        total = self.alpha * l_im + rl_scale * l_rl
        if not np.isfinite(total):
            raise NumericalAbort("blended loss is not finite")
        self.rl._apply_policy_grads()
        self.rl._update_trust_regions(kls)
        return total


def dagger_loss(learner: DaggerLearner, states, rng) -> float:
    """Op form: evaluate the imitation loss without touching parameters."""
    m = learner.m_teacher
    b = states.shape[0]
    a_teacher = learner.teacher.sample_batch(states, rng, n=m)
    lp = learner.policy.log_prob_batch(np.repeat(states, m, axis=0),
                                       a_teacher.reshape(b * m, -1))
    return -float(np.mean(lp))


def rhpo_reload(checkpoint_docs, freeze: bool, add_new: bool, hidden,
                rng: np.random.Generator) -> MixturePolicy:
    """Mixture from skill checkpoints; optionally append a fresh component."""
    comps = []
    for doc in checkpoint_docs:
        pol = policy_from_doc(doc)
        if not isinstance(pol, GaussianPolicy):
            raise ConfigurationError("mixture components must be gaussian skills")
        comps.append(pol)
    dims = {(c.net.in_dim, c.action_dim) for c in comps}
    if len(dims) != 1:
        raise ConfigurationError("skill checkpoints disagree on dimensions")
    state_dim, action_dim = dims.pop()
    frozen = [freeze] * len(comps)
    if add_new:
        comps.append(GaussianPolicy.create(state_dim, action_dim, hidden, rng,
                                           zero_final=True))
        frozen.append(False)
    head = Mlp.create((state_dim, *hidden, len(comps)), rng, zero_final=True)
    return MixturePolicy(comps, frozen, head)
