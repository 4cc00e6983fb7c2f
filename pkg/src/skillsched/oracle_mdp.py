"""Tabular oracle for the counter-augmented Bellman operator.

A tiny deterministic MDP over discrete states and skills, a fixed joint
policy over (skill index, length slot), an exact linear solve of the
augmented-state Q system, and synchronous TD sweeps driven through the same
td_target op the neural learner uses. The two routes must meet: that is the
contract the sweep/solve comparison checks.
"""

from __future__ import annotations

from dataclasses import dataclass
from types import SimpleNamespace

import numpy as np

from .scheduler import Targets, td_target


@dataclass
class TabularSkillMdp:
    """Deterministic per-skill transitions with a fixed scheduler policy.

    next_state[s][i] and reward[s][i] describe executing skill i one step
    from state s; policy_probs[s] is an (n_skills, n_lengths) joint mass.
    """

    next_state: np.ndarray   # (S, I) int
    reward: np.ndarray       # (S, I) float
    lengths: tuple           # length table
    policy_probs: np.ndarray  # (S, I, M)

    @property
    def n_states(self) -> int:
        return self.next_state.shape[0]

    @property
    def n_skills(self) -> int:
        return self.next_state.shape[1]

    def augmented_states(self):
        """All (s, c, i, slot) with 1 <= c <= lengths[slot]."""
        out = []
        for s in range(self.n_states):
            for i in range(self.n_skills):
                for slot, k in enumerate(self.lengths):
                    for c in range(1, k + 1):
                        out.append((s, c, i, slot))
        return out

    def index_of(self):
        return {x: j for j, x in enumerate(self.augmented_states())}


def default_oracle_mdp() -> TabularSkillMdp:
    """3 states, 2 skills, lengths {1, 2}: skill 0 cycles, skill 1 holds."""
    next_state = np.array([[1, 0], [2, 1], [0, 2]])
    reward = np.array([[0.0, 1.0], [2.0, -1.0], [1.0, 0.5]])
    # fixed, non-uniform joint policy; rows normalized per state
    raw = np.array([
        [[0.30, 0.20], [0.25, 0.25]],
        [[0.10, 0.40], [0.20, 0.30]],
        [[0.25, 0.25], [0.40, 0.10]],
    ])
    probs = raw / raw.sum(axis=(1, 2), keepdims=True)
    return TabularSkillMdp(next_state=next_state, reward=reward,
                           lengths=(1, 2), policy_probs=probs)


def solve_q_exact(mdp: TabularSkillMdp, gamma: float) -> np.ndarray:
    """Direct linear solve of the augmented-state fixed point."""
    states = mdp.augmented_states()
    idx = {x: j for j, x in enumerate(states)}
    n = len(states)
    a = np.eye(n)
    b = np.zeros(n)
    for row, (s, c, i, slot) in enumerate(states):
        b[row] = mdp.reward[s, i]
        s2 = mdp.next_state[s, i]
        if c == 1:
            for i2 in range(mdp.n_skills):
                for slot2, k2 in enumerate(mdp.lengths):
                    p = mdp.policy_probs[s2, i2, slot2]
                    a[row, idx[(s2, k2, i2, slot2)]] -= gamma * p
        else:
            a[row, idx[(s2, c - 1, i, slot)]] -= gamma
    return np.linalg.solve(a, b)


def tabular_targets(mdp: TabularSkillMdp, q: np.ndarray) -> Targets:
    idx = mdp.index_of()

    def q_fn(s, c, i, slot):
        return q[idx[(int(s), int(c), int(i), int(slot))]]

    def probs_fn(s):
        return mdp.policy_probs[int(s)]

    return Targets(q=q_fn, probs=probs_fn, lengths=mdp.lengths)


def td_sweep(mdp: TabularSkillMdp, q: np.ndarray, gamma: float) -> np.ndarray:
    """One synchronous application of td_target over every augmented state."""
    targets = tabular_targets(mdp, q)
    out = np.empty_like(q)
    for row, (s, c, i, slot) in enumerate(mdp.augmented_states()):
        tr = SimpleNamespace(s_next=mdp.next_state[s, i], c=c, i=i,
                             k=mdp.lengths[slot], r=mdp.reward[s, i], done=False)
        out[row] = td_target(tr, targets, gamma)
    return out


def run_convergence_check(gamma: float = 0.9, tol: float = 1e-5,
                          max_sweeps: int = 10_000):
    """Iterate td_target sweeps from zero; report sup error vs linear solve.

    Returns (sweeps_used, final_error, errors_monotone).
    """
    mdp = default_oracle_mdp()
    exact = solve_q_exact(mdp, gamma)
    q = np.zeros_like(exact)
    prev_err = np.inf
    monotone = True
    for sweep in range(1, max_sweeps + 1):
        q = td_sweep(mdp, q, gamma)
        err = float(np.max(np.abs(q - exact)))
        if err > prev_err + 1e-12:
            monotone = False
        prev_err = err
        if err < tol:
            return sweep, err, monotone
    return max_sweeps, prev_err, monotone


def counter_blind_residual(gamma: float = 0.9, sweeps: int = 2000) -> float:
    """Fixed-point residual when the critic cannot see the counter.

    Q is forced to be constant in c by averaging each (s, i, slot) group
    after every sweep; the residual of the true operator then cannot vanish,
    which is exactly why the counter channel exists.
    """
    mdp = default_oracle_mdp()
    states = mdp.augmented_states()
    groups = {}
    for row, (s, c, i, slot) in enumerate(states):
        groups.setdefault((s, i, slot), []).append(row)
    q = np.zeros(len(states))
    for _ in range(sweeps):
        q = td_sweep(mdp, q, gamma)
        for rows in groups.values():
            q[rows] = np.mean(q[rows])
    residual = np.max(np.abs(td_sweep(mdp, q, gamma) - q))
    return float(residual)
