"""The scheduler learner: a counter-augmented critic Q(s, c, i, k), policy
evaluation with the decision-point case split, a categorical E-step with a
temperature dual, and a KL-constrained M-step applied only where the
scheduler actually sampled a fresh action.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from . import em
from .errors import ConfigurationError, NumericalAbort
from .numerics import (CHECKPOINT_FORMAT_VERSION, AdamState, GradTape, Mlp,
                       adam_step, mlp_from_doc, mlp_to_doc)
from .policies import (FactoredCategorical, SchedulerAction, SkillSet,
                       categorical_kl, log_softmax, softmax)


class Targets(NamedTuple):
    """Frozen snapshots used to build TD targets.

    q(s, c, i, k_slot) -> value; probs(s) -> joint masses (n_idx, n_len).
    """

    q: Callable
    probs: Callable
    lengths: tuple


def td_target(tr, targets: Targets, gamma: float) -> float:
    """One-step target with the decision-point case split.

    tr needs fields s_next, c, i, k, r, done. When the successor step is a
    decision point (c == 1), the target takes the expectation over fresh
    joint actions, each evaluated at its own full counter c' = k'; otherwise
    it follows the stored action with the counter decremented.
    """
    if tr.done:
        return float(tr.r)
    lengths = targets.lengths
    if tr.c == 1:
        probs = targets.probs(tr.s_next)
        v = 0.0
        for i in range(probs.shape[0]):
            for slot in range(probs.shape[1]):
                if probs[i, slot] == 0.0:
                    continue
                v += probs[i, slot] * targets.q(tr.s_next, lengths[slot], i, slot)
        return float(tr.r + gamma * v)
    slot = lengths.index(tr.k)
    return float(tr.r + gamma * targets.q(tr.s_next, tr.c - 1, tr.i, slot))


@dataclass
class InitBias:
    """Initial state-independent marginals; masses are renormalized."""

    length_masses: np.ndarray | None = None
    index_masses: np.ndarray | None = None

    @staticmethod
    def largest_length(lengths, top_mass: float = 0.95, rest_mass: float = 0.005):
        m = np.full(len(lengths), rest_mass)
        m[int(np.argmax(lengths))] = top_mass
        return InitBias(length_masses=m)


@dataclass
class SchedulerConfig:
    lengths: tuple
    n_options: int                 # frozen skills plus the new-skill slot
    gamma: float = 0.99
    lr: float = 1e-4
    eps_estep: float = 0.1
    eps_index: float = 5e-3
    eps_length: float = 5e-3
    hidden: tuple = (64, 64)
    target_policy_period: int = 100
    target_critic_period: int = 25


class SchedulerCritic:
    """Mlp over (state, c/k_max, one-hot index, one-hot length slot)."""

    def __init__(self, state_dim: int, n_idx: int, n_len: int, k_max: int,
                 hidden, rng):
        self.state_dim = state_dim
        self.n_idx = n_idx
        self.n_len = n_len
        self.k_max = k_max
        in_dim = state_dim + 1 + n_idx + n_len
        self.net = Mlp.create((in_dim, *hidden, 1), rng, zero_final=True)

    def features(self, states: np.ndarray, c: np.ndarray, i: np.ndarray,
                 k_slot: np.ndarray) -> np.ndarray:
        b = states.shape[0]
        f = np.zeros((b, self.net.in_dim))
        f[:, : self.state_dim] = states
        f[:, self.state_dim] = np.asarray(c, dtype=float) / self.k_max
        f[np.arange(b), self.state_dim + 1 + np.asarray(i, dtype=int)] = 1.0
        f[np.arange(b), self.state_dim + 1 + self.n_idx + np.asarray(k_slot, dtype=int)] = 1.0
        return f

    def q_batch(self, states, c, i, k_slot):
        y, cache = self.net.forward_batch(self.features(states, c, i, k_slot))
        return y[:, 0], cache

    def q_value(self, state, c, i, k_slot) -> float:
        q, _ = self.q_batch(np.asarray(state, dtype=float)[None, :],
                            np.array([c]), np.array([i]), np.array([k_slot]))
        return float(q[0])

    def q_all_actions(self, states: np.ndarray, lengths) -> np.ndarray:
        """(B, n_idx * n_len) target values, each at counter c' = k'."""
        b = states.shape[0]
        n_act = self.n_idx * self.n_len
        s_rep = np.repeat(states, n_act, axis=0)
        i_rep = np.tile(np.repeat(np.arange(self.n_idx), self.n_len), b)
        slot_rep = np.tile(np.tile(np.arange(self.n_len), self.n_idx), b)
        c_rep = np.asarray(lengths)[slot_rep]
        q, _ = self.q_batch(s_rep, c_rep, i_rep, slot_rep)
        return q.reshape(b, n_act)

    def copy(self) -> "SchedulerCritic":
        other = SchedulerCritic.__new__(SchedulerCritic)
        other.state_dim, other.n_idx = self.state_dim, self.n_idx
        other.n_len, other.k_max = self.n_len, self.k_max
        other.net = self.net.copy()
        return other


def e_step_weights(q_values: np.ndarray, prior_masses: np.ndarray, eps: float,
                   eta_init: float = 1.0):
    """Categorical E-step over enumerated joint actions.

    q_values, prior_masses: (B, A). Returns (q masses (B, A), eta*).
    """
    del eta_init  # the dual is solved from scratch per batch
    log_prior = np.log(np.maximum(prior_masses, 1e-300))
    return em.estep_weights(q_values, log_prior, eps)


class SchedulerLearner:
    """Owns the factored categorical policy, the counter critic and their
    target snapshots; acting and learning interleave on one thread."""

    def __init__(self, state_dim: int, cfg: SchedulerConfig, skills: SkillSet,
                 rng: np.random.Generator):
        if skills.n_options != cfg.n_options:
            raise ConfigurationError("skill set size != configured options")
        self.cfg = cfg
        self.skills = skills
        self.lengths = tuple(cfg.lengths)
        self.n_idx = cfg.n_options
        self.n_len = len(self.lengths)
        self.k_max = max(self.lengths)
        self.state_dim = state_dim

        self.policy = Mlp.create((state_dim, *cfg.hidden, self.n_idx + self.n_len),
                                 rng, zero_final=True)
        self.critic = SchedulerCritic(state_dim, self.n_idx, self.n_len,
                                      self.k_max, cfg.hidden, rng)
        self.target_policy = self.policy.copy()
        self.target_critic = self.critic.copy()

        self._policy_tape = GradTape(self.policy)
        self._critic_tape = GradTape(self.critic.net)
        self._policy_adam = AdamState.for_net(self.policy, cfg.lr)
        self._critic_adam = AdamState.for_net(self.critic.net, cfg.lr)
        self.tr_index = em.TrustRegion(cfg.eps_index)
        self.tr_length = em.TrustRegion(cfg.eps_length)
        self.n_policy_updates = 0
        self.n_critic_updates = 0

    # -- policy heads ----------------------------------------------------

    def _split(self, logits: np.ndarray):
        return logits[..., : self.n_idx], logits[..., self.n_idx :]

    def dist(self, state: np.ndarray, net: Mlp | None = None) -> FactoredCategorical:
        net = net or self.policy
        li, lk = self._split(net.forward(np.asarray(state, dtype=float)))
        return FactoredCategorical(li, lk, self.lengths)

    def joint_probs_batch(self, states: np.ndarray, net: Mlp) -> np.ndarray:
        logits, _ = net.forward_batch(states)
        li, lk = self._split(logits)
        return (softmax(li)[:, :, None] * softmax(lk)[:, None, :]).reshape(
            states.shape[0], -1)

    # -- acting ------------------------------------------------------------

    def act(self, state, current, rng: np.random.Generator,
            greedy_skills: bool = False):
        """Counter-gated action selection.

        current is None at episode start, else (z, c) from the previous
        step. Returns (a, (z, c), decision_point).
        """
        if current is None or current[1] == 1:
            z = self.dist(state).sample(rng)
            c, decision = z.k, True
        else:
            z, c = current[0], current[1] - 1
            decision = False
        a = self.skills.act(z.i, state, rng, greedy=greedy_skills)
        return a, (z, c), decision

    # -- learning ----------------------------------------------------------

    def targets(self) -> Targets:
        def q(s, c, i, slot):
            return self.target_critic.q_value(s, c, i, slot)

        def probs(s):
            li, lk = self._split(self.target_policy.forward(np.asarray(s, dtype=float)))
            return np.outer(softmax(li), softmax(lk))

        return Targets(q=q, probs=probs, lengths=self.lengths)

    def _td_targets_batch(self, batch) -> np.ndarray:
        s_next, r = batch["s_next"], batch["r"]
        c, i, k_slot = batch["c"], batch["i"], batch["k_slot"]
        done = batch["done"]
        target = r.astype(float).copy()
        live = ~done
        fresh = live & (c == 1)
        cont = live & (c > 1)
        if np.any(fresh):
            probs = self.joint_probs_batch(s_next[fresh], self.target_policy)
            q_all = self.target_critic.q_all_actions(s_next[fresh], self.lengths)
            target[fresh] += self.cfg.gamma * np.sum(probs * q_all, axis=1)
        if np.any(cont):
            q_next, _ = self.target_critic.q_batch(
                s_next[cont], c[cont] - 1, i[cont], k_slot[cont])
            target[cont] += self.cfg.gamma * q_next
        return target

    def critic_update(self, batch) -> float:
        """One squared-TD regression step onto the frozen-snapshot targets."""
        target = self._td_targets_batch(batch)
        q, cache = self.critic.q_batch(batch["s"], batch["c"], batch["i"],
                                       batch["k_slot"])
        err = q - target
        loss = float(np.mean(err ** 2))
        if not np.isfinite(loss):
            raise NumericalAbort("scheduler critic loss is not finite")
        self._critic_tape.zero()
        dq = (2.0 / err.shape[0]) * err
        self.critic.net.backward_batch(cache, dq[:, None], self._critic_tape)
        adam_step(self.critic.net.params, self._critic_tape, self._critic_adam)
        self.n_critic_updates += 1
        if self.n_critic_updates % self.cfg.target_critic_period == 0:
            self.target_critic.net.load_params(self.critic.net.params)
        return loss

    def policy_update(self, batch) -> float | None:
        """E-step on decision-point rows, then the KL-constrained M-step."""
        mask = batch["decision"]
        if not np.any(mask):
            return None
        states = batch["s"][mask]
        prior = self.joint_probs_batch(states, self.target_policy)
        # improvement weights use the critic at c = 1
        b = states.shape[0]
        n_act = self.n_idx * self.n_len
        s_rep = np.repeat(states, n_act, axis=0)
        i_rep = np.tile(np.repeat(np.arange(self.n_idx), self.n_len), b)
        slot_rep = np.tile(np.tile(np.arange(self.n_len), self.n_idx), b)
        q, _ = self.target_critic.q_batch(s_rep, np.ones(b * n_act), i_rep, slot_rep)
        q_all = q.reshape(b, n_act)
        q_masses, _eta = e_step_weights(q_all, prior, self.cfg.eps_estep)
        return self.m_step(states, q_masses)

    def m_step(self, states: np.ndarray, q_masses: np.ndarray) -> float:
        """Fit the factored policy to q under per-head trust regions."""
        b = states.shape[0]
        q_joint = q_masses.reshape(b, self.n_idx, self.n_len)
        q_i = q_joint.sum(axis=2)
        q_k = q_joint.sum(axis=1)

        logits, cache = self.policy.forward_batch(states)
        li, lk = self._split(logits)
        t_logits, _ = self.target_policy.forward_batch(states)
        ti, tk = self._split(t_logits)

        lsm_i, lsm_k = log_softmax(li, axis=1), log_softmax(lk, axis=1)
        ce = -float(np.mean(np.sum(q_i * lsm_i, axis=1) + np.sum(q_k * lsm_k, axis=1)))
        pi_i, pi_k = np.exp(lsm_i), np.exp(lsm_k)
        tpi_i = softmax(ti, axis=1)
        tpi_k = softmax(tk, axis=1)
        kl_i = float(np.mean(np.sum(tpi_i * (log_softmax(ti, axis=1) - lsm_i), axis=1)))
        kl_k = float(np.mean(np.sum(tpi_k * (log_softmax(tk, axis=1) - lsm_k), axis=1)))
        lam_i, lam_k = self.tr_index.multiplier, self.tr_length.multiplier
        loss = ce + lam_i * kl_i + lam_k * kl_k
        if not np.isfinite(loss):
            raise NumericalAbort("scheduler policy loss is not finite")

        d_i = ((1.0 + lam_i) * pi_i - q_i - lam_i * tpi_i) / b
        d_k = ((1.0 + lam_k) * pi_k - q_k - lam_k * tpi_k) / b
        self._policy_tape.zero()
        self.policy.backward_batch(cache, np.concatenate([d_i, d_k], axis=1),
                                   self._policy_tape)
        adam_step(self.policy.params, self._policy_tape, self._policy_adam)
        self.tr_index.update(kl_i)
        self.tr_length.update(kl_k)
        self.n_policy_updates += 1
        if self.n_policy_updates % self.cfg.target_policy_period == 0:
            self.target_policy.load_params(self.policy.params)
        return loss

    # -- initial bias ------------------------------------------------------

    def apply_init_bias(self, bias: InitBias) -> None:
        """Zero the final layer and write log-masses into its bias so the
        initial marginals are state-independent and exact."""
        w_slice, b_slice = self.policy.layer_slices()[-1]
        self.policy.params[w_slice] = 0.0
        head_bias = np.zeros(self.n_idx + self.n_len)
        if bias.index_masses is not None:
            m = np.asarray(bias.index_masses, dtype=float)
            head_bias[: self.n_idx] = np.log(m / m.sum())
        if bias.length_masses is not None:
            m = np.asarray(bias.length_masses, dtype=float)
            head_bias[self.n_idx :] = np.log(m / m.sum())
        self.policy.params[b_slice] = head_bias
        self.target_policy.load_params(self.policy.params)

    # -- checkpointing -----------------------------------------------------

    def to_doc(self) -> dict:
        return {
            "format_version": CHECKPOINT_FORMAT_VERSION,
            "policy_kind": "factored_categorical",
            "lengths": list(self.lengths),
            "n_options": self.n_idx,
            "policy": mlp_to_doc(self.policy),
            "critic": mlp_to_doc(self.critic.net),
        }

    def load_doc(self, doc: dict) -> None:
        if tuple(doc["lengths"]) != self.lengths or doc["n_options"] != self.n_idx:
            raise ConfigurationError("scheduler checkpoint shape mismatch")
        self.policy.load_params(mlp_from_doc(doc["policy"]).params)
        self.critic.net.load_params(mlp_from_doc(doc["critic"]).params)
        self.target_policy.load_params(self.policy.params)
        self.target_critic.net.load_params(self.critic.net.params)
