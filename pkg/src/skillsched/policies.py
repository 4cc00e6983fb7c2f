"""Policy heads and distributions.

Diagonal Gaussians are the low-level skill representation, mixtures of
Gaussians back the reload / regularisation baselines (and the uniform
frozen prior), and the factored categorical over (skill index, skill
length) is what the scheduler samples.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .numerics import (CHECKPOINT_FORMAT_VERSION, GradTape, Mlp, mlp_from_doc,
                       mlp_to_doc)

LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0
LOG_2PI = math.log(2.0 * math.pi)


def log_softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = logits - np.max(logits, axis=axis, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    return np.exp(log_softmax(logits, axis=axis))


def logsumexp(x: np.ndarray, axis: int = -1) -> np.ndarray:
    m = np.max(x, axis=axis, keepdims=True)
    return np.squeeze(m, axis=axis) + np.log(np.sum(np.exp(x - m), axis=axis))


def categorical_kl(p_logits: np.ndarray, q_logits: np.ndarray) -> float:
    """KL(p || q) for two logit vectors of equal length."""
    p_logits = np.asarray(p_logits, dtype=np.float64)
    q_logits = np.asarray(q_logits, dtype=np.float64)
    if p_logits.shape != q_logits.shape:
        raise ConfigurationError("logit shapes differ")
    lp = log_softmax(p_logits)
    lq = log_softmax(q_logits)
    return float(np.sum(np.exp(lp) * (lp - lq), axis=-1))


def gaussian_kl(mean_p, std_p, mean_q, std_q):
    """Decoupled trust-region KL: (mean part with q's covariance,
    covariance part with shared mean). Sums over action dimensions."""
    mean_p, std_p = np.asarray(mean_p), np.asarray(std_p)
    mean_q, std_q = np.asarray(mean_q), np.asarray(std_q)
    kl_mean = 0.5 * np.sum(((mean_p - mean_q) / std_q) ** 2, axis=-1)
    ratio = (std_p / std_q) ** 2
    kl_cov = np.sum(0.5 * (ratio - 1.0) - np.log(std_p / std_q), axis=-1)
    return kl_mean, kl_cov


class GaussianPolicy:
    """Diagonal Gaussian whose torso emits (mean, log_std) per action dim."""

    kind = "gaussian"

    def __init__(self, net: Mlp, action_dim: int):
        if net.out_dim != 2 * action_dim:
            raise ConfigurationError(
                f"head size {net.out_dim} != 2 x action dim {action_dim}")
        self.net = net
        self.action_dim = action_dim

    @classmethod
    def create(cls, state_dim, action_dim, hidden, rng, zero_final=True):
        sizes = (state_dim, *hidden, 2 * action_dim)
        return cls(Mlp.create(sizes, rng, zero_final=zero_final), action_dim)

    def mean_std_batch(self, states: np.ndarray):
        y, cache = self.net.forward_batch(states)
        mean = y[:, : self.action_dim]
        raw = y[:, self.action_dim :]
        clamped = np.clip(raw, LOG_STD_MIN, LOG_STD_MAX)
        std = np.exp(clamped)
        mask = ((raw > LOG_STD_MIN) & (raw < LOG_STD_MAX)).astype(np.float64)
        return mean, std, mask, cache

    def mean_action(self, state: np.ndarray) -> np.ndarray:
        y = self.net.forward(state)
        return y[: self.action_dim].copy()

    def sample(self, state: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        mean, std, _, _ = self.mean_std_batch(np.asarray(state)[None, :])
        return mean[0] + std[0] * rng.standard_normal(self.action_dim)

    def sample_batch(self, states: np.ndarray, rng: np.random.Generator,
                     n: int = 1) -> np.ndarray:
        """(B, n, action_dim) draws."""
        mean, std, _, _ = self.mean_std_batch(states)
        noise = rng.standard_normal((states.shape[0], n, self.action_dim))
        return mean[:, None, :] + std[:, None, :] * noise

    def log_prob_batch(self, states: np.ndarray, actions: np.ndarray):
        lp, _ = self.log_prob_with_aux(states, actions)
        return lp

    def log_prob_with_aux(self, states: np.ndarray, actions: np.ndarray):
        """Returns (log_prob[B], aux) where aux feeds backward_weighted."""
        mean, std, mask, cache = self.mean_std_batch(states)
        z = (actions - mean) / std
        log_std = np.log(std)
        lp = np.sum(-0.5 * z * z - log_std - 0.5 * LOG_2PI, axis=1)
        return lp, (cache, std, mask, z)

    def backward_weighted(self, aux, weights: np.ndarray, tape: GradTape):
        """Accumulate d(sum_b w_b * log_prob_b)/dparams into tape."""
        cache, std, mask, z = aux
        w = weights[:, None]
        dmean = w * z / std
        dlogstd = w * (z * z - 1.0) * mask
        self.net.backward_batch(cache, np.concatenate([dmean, dlogstd], axis=1), tape)

    def copy(self) -> "GaussianPolicy":
        return GaussianPolicy(self.net.copy(), self.action_dim)

    def to_doc(self) -> dict:
        doc = mlp_to_doc(self.net)
        doc["policy_kind"] = self.kind
        doc["action_dim"] = self.action_dim
        return doc

    @classmethod
    def from_doc(cls, doc: dict) -> "GaussianPolicy":
        return cls(mlp_from_doc(doc), int(doc["action_dim"]))


def gaussian_log_prob(policy: GaussianPolicy, state, action) -> float:
    lp = policy.log_prob_batch(np.asarray(state, dtype=float)[None, :],
                               np.asarray(action, dtype=float)[None, :])
    return float(lp[0])


class MixturePolicy:
    """Mixture of Gaussians; per-component frozen flags gate gradients.

    head is an Mlp emitting one logit per component; head=None means
    constant uniform weights (the frozen-prior case).
    """

    kind = "mixture"

    def __init__(self, components, frozen, head: Mlp | None):
        if not components:
            raise ConfigurationError("mixture needs at least one component")
        if len(frozen) != len(components):
            raise ConfigurationError("frozen flags / components length mismatch")
        dims = {c.action_dim for c in components}
        if len(dims) != 1:
            raise ConfigurationError("component action dims differ")
        if head is not None and head.out_dim != len(components):
            raise ConfigurationError("head size != number of components")
        self.components = list(components)
        self.frozen = list(frozen)
        self.head = head
        self.action_dim = components[0].action_dim

    @property
    def n_components(self) -> int:
        return len(self.components)

    def log_weights_batch(self, states: np.ndarray):
        b = states.shape[0]
        if self.head is None:
            lw = np.full((b, self.n_components), -math.log(self.n_components))
            return lw, None
        logits, cache = self.head.forward_batch(states)
        return log_softmax(logits, axis=1), cache

    def log_prob_with_aux(self, states: np.ndarray, actions: np.ndarray):
        lw, head_cache = self.log_weights_batch(states)
        comp_lp = np.empty((states.shape[0], self.n_components))
        comp_aux = []
        for c, comp in enumerate(self.components):
            lp, aux = comp.log_prob_with_aux(states, actions)
            comp_lp[:, c] = lp
            comp_aux.append(aux)
        joint = lw + comp_lp
        total = logsumexp(joint, axis=1)
        resp = np.exp(joint - total[:, None])
        return total, (head_cache, lw, resp, comp_aux)

    def log_prob_batch(self, states, actions):
        lp, _ = self.log_prob_with_aux(states, actions)
        return lp

    def backward_weighted(self, aux, weights, comp_tapes, head_tape):
        """Accumulate d(sum_b w_b log_prob_b); frozen components get
        None/ignored tapes."""
        head_cache, lw, resp, comp_aux = aux
        if self.head is not None and head_tape is not None:
            dlogits = weights[:, None] * (resp - np.exp(lw))
            self.head.backward_batch(head_cache, dlogits, head_tape)
        for c, comp in enumerate(self.components):
            if self.frozen[c] or comp_tapes[c] is None:
                continue
            comp.backward_weighted(comp_aux[c], weights * resp[:, c], comp_tapes[c])

    def sample(self, state, rng: np.random.Generator) -> np.ndarray:
        lw, _ = self.log_weights_batch(np.asarray(state, dtype=float)[None, :])
        c = int(rng.choice(self.n_components, p=np.exp(lw[0])))
        return self.components[c].sample(state, rng)

    def sample_batch(self, states, rng, n: int = 1) -> np.ndarray:
        lw, _ = self.log_weights_batch(states)
        w = np.exp(lw)
        b = states.shape[0]
        out = np.empty((b, n, self.action_dim))
        comps = np.empty((b, n), dtype=np.intp)
        u = rng.random((b, n))
        cdf = np.cumsum(w, axis=1)
        for j in range(n):
            comps[:, j] = np.minimum((u[:, j : j + 1] < cdf).argmax(axis=1),
                                     self.n_components - 1)
        draws = [comp.sample_batch(states, rng, n) for comp in self.components]
        for c in range(self.n_components):
            sel = comps == c
            out[sel] = draws[c][sel]
        return out

    def to_doc(self) -> dict:
        doc = {
            "format_version": CHECKPOINT_FORMAT_VERSION,
            "policy_kind": self.kind,
            "components": [c.to_doc() for c in self.components],
            "frozen": list(self.frozen),
        }
        if self.head is not None:
            doc["head"] = mlp_to_doc(self.head)
        return doc

    @classmethod
    def from_doc(cls, doc: dict) -> "MixturePolicy":
        comps = [GaussianPolicy.from_doc(d) for d in doc["components"]]
        head = mlp_from_doc(doc["head"]) if "head" in doc else None
        return cls(comps, list(doc["frozen"]), head)


def uniform_mixture(skills) -> MixturePolicy:
    """Frozen uniform mixture over loaded skills (the behavior prior)."""
    return MixturePolicy(list(skills), [True] * len(skills), head=None)


def mixture_log_prob(mix: MixturePolicy, state, action) -> float:
    lp = mix.log_prob_batch(np.asarray(state, dtype=float)[None, :],
                            np.asarray(action, dtype=float)[None, :])
    return float(lp[0])


@dataclass(frozen=True)
class SchedulerAction:
    """Pair of skill index and execution length in environment steps."""

    i: int
    k: int


class FactoredCategorical:
    """Product distribution over skill index and skill length."""

    kind = "factored_categorical"

    def __init__(self, index_logits, length_logits, lengths):
        self.index_logits = np.asarray(index_logits, dtype=np.float64)
        self.length_logits = np.asarray(length_logits, dtype=np.float64)
        self.lengths = tuple(int(k) for k in lengths)
        if self.length_logits.shape[0] != len(self.lengths):
            raise ConfigurationError("length logits / table size mismatch")
        if not (np.all(np.isfinite(self.index_logits))
                and np.all(np.isfinite(self.length_logits))):
            raise ConfigurationError("non-finite logits")

    def index_probs(self) -> np.ndarray:
        return softmax(self.index_logits)

    def length_probs(self) -> np.ndarray:
        return softmax(self.length_logits)

    def joint_probs(self) -> np.ndarray:
        """(n_indices, n_lengths) matrix of joint masses."""
        return np.outer(self.index_probs(), self.length_probs())

    def sample(self, rng: np.random.Generator) -> SchedulerAction:
        i = int(rng.choice(self.index_logits.shape[0], p=self.index_probs()))
        slot = int(rng.choice(len(self.lengths), p=self.length_probs()))
        return SchedulerAction(i=i, k=self.lengths[slot])


def factored_sample(dist: FactoredCategorical, rng) -> SchedulerAction:
    return dist.sample(rng)


class SkillSet:
    """Frozen pretrained skills plus an optional trainable new-skill slot.

    Index len(frozen) addresses the new skill when present.
    """

    def __init__(self, frozen_skills, new_skill: GaussianPolicy | None,
                 names=None):
        self.frozen = list(frozen_skills)
        self.new_skill = new_skill
        self.names = list(names) if names else [f"skill_{i}" for i in
                                                range(len(self.frozen))]
        if new_skill is not None:
            self.names = self.names + ["new_skill"]

    @property
    def n_options(self) -> int:
        return len(self.frozen) + (1 if self.new_skill is not None else 0)

    def policy(self, i: int) -> GaussianPolicy:
        if i < len(self.frozen):
            return self.frozen[i]
        if self.new_skill is not None and i == len(self.frozen):
            return self.new_skill
        raise ConfigurationError(f"skill index {i} out of range")

    def act(self, i: int, state, rng, greedy: bool = False) -> np.ndarray:
        pol = self.policy(i)
        return pol.mean_action(state) if greedy else pol.sample(state, rng)


def policy_from_doc(doc: dict):
    kind = doc.get("policy_kind")
    if kind == "gaussian":
        return GaussianPolicy.from_doc(doc)
    if kind == "mixture":
        return MixturePolicy.from_doc(doc)
    raise ConfigurationError(f"unknown policy_kind {kind!r}")
