"""Dual-view experience storage.

Episodes are stored columnar in a ring of whole-episode blocks. The
low-level view (s, a, r, s') feeds the new-skill learner and excludes
augmented duplicates; the high-level view (s, z, c, r, s') feeds the
scheduler and samples originals and duplicates alike. Long single-skill
executions are additionally rewritten as repeated shortest-length
executions to densify scheduler decision points.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, MalformedEpisodeError
from .policies import SchedulerAction


@dataclass
class Transition:
    """One environment step carrying both action views.

    c counts steps remaining in the current skill execution (k .. 1);
    decision_point marks the steps where the scheduler sampled z fresh.
    """

    s: np.ndarray
    a: np.ndarray
    z: SchedulerAction
    c: int
    r: float
    s_next: np.ndarray
    done: bool
    decision_point: bool


def validate_episode(episode, lengths=None) -> None:
    if not episode:
        raise MalformedEpisodeError("empty episode")
    prev = None
    for t, tr in enumerate(episode):
        if tr.c < 1:
            raise MalformedEpisodeError(f"counter {tr.c} < 1 at step {t}")
        if lengths is not None and tr.z.k not in lengths:
            raise MalformedEpisodeError(f"length {tr.z.k} not in table at step {t}")
        fresh = prev is None or prev.c == 1
        if tr.decision_point != fresh:
            raise MalformedEpisodeError(f"decision flag wrong at step {t}")
        if fresh:
            if tr.c != tr.z.k:
                raise MalformedEpisodeError(
                    f"counter {tr.c} != chosen length {tr.z.k} at decision step {t}")
        else:
            if tr.z != prev.z or tr.c != prev.c - 1:
                raise MalformedEpisodeError(f"segment law broken at step {t}")
        if tr.done and t != len(episode) - 1:
            raise MalformedEpisodeError(f"done before episode end at step {t}")
        prev = tr


def split_skill_trajectories(episode):
    """Contiguous runs executed under one scheduler action."""
    runs, start = [], 0
    for t in range(1, len(episode)):
        if episode[t].decision_point:
            runs.append(episode[start:t])
            start = t
    runs.append(episode[start:])
    return runs


def augment(traj, k_min: int):
    """Duplicated trajectory with the same skill re-chosen every k_min steps.

    Returns None when the chosen length is not a multiple of k_min. The
    low-level content (s, a, r, s') is shared bitwise with the original;
    only z, c and the decision flags are rewritten.
    """
    k_star = traj[0].z.k
    if k_star % k_min != 0:
        return None
    i_star = traj[0].z.i
    z_bar = SchedulerAction(i=i_star, k=k_min)
    out = []
    for off, tr in enumerate(traj):
        out.append(Transition(
            s=tr.s, a=tr.a, z=z_bar,
            c=k_min - (off % k_min),
            r=tr.r, s_next=tr.s_next, done=tr.done,
            decision_point=(off % k_min == 0),
        ))
    return out


@dataclass
class FlowController:
    """Pins the ratio of sampled transitions to inserted transitions."""

    samples_per_insert: float
    tolerance: float = 0.0
    inserts: int = 0
    samples: int = 0

    def note_insert(self, n: int) -> None:
        self.inserts += n

    def note_samples(self, n: int) -> None:
        self.samples += n

    def gate(self) -> bool:
        return flow_gate(self, self.inserts, self.samples)

    def achieved_ratio(self) -> float:
        return self.samples / self.inserts if self.inserts else 0.0


def flow_gate(controller: FlowController, inserts: int, samples: int) -> bool:
    """Permit the next learner step while the achieved ratio is below target."""
    limit = controller.samples_per_insert * inserts * (1.0 + controller.tolerance)
    return samples < limit


class ReplayBuffer:
    """Ring of whole episodes with columnar storage.

    Eviction is FIFO at episode granularity: an episode and the duplicated
    trajectories generated from it leave together.
    """

    def __init__(self, capacity: int, state_dim: int, action_dim: int,
                 lengths, augment_enabled: bool = True):
        if capacity <= 0:
            raise ConfigurationError("capacity must be positive")
        self.capacity = int(capacity)
        self.lengths = tuple(int(k) for k in lengths)
        self.k_min = min(self.lengths)
        self.augment_enabled = augment_enabled
        self._slot = {k: j for j, k in enumerate(self.lengths)}

        c = self.capacity
        self._s = np.zeros((c, state_dim))
        self._a = np.zeros((c, action_dim))
        self._s_next = np.zeros((c, state_dim))
        self._r = np.zeros(c)
        self._c = np.zeros(c, dtype=np.int64)
        self._i = np.zeros(c, dtype=np.int64)
        self._k = np.zeros(c, dtype=np.int64)
        self._k_slot = np.zeros(c, dtype=np.int64)
        self._done = np.zeros(c, dtype=bool)
        self._decision = np.zeros(c, dtype=bool)

        self._blocks: list[dict] = []  # insertion-ordered {start, length, episode, dup}
        self._head = 0
        self._episode_counter = 0
        self.total_inserted = 0  # original transitions only

    # -- sizes ---------------------------------------------------------------

    @property
    def size(self) -> int:
        return sum(b["length"] for b in self._blocks)

    @property
    def size_lowlevel(self) -> int:
        return sum(b["length"] for b in self._blocks if not b["dup"])

    # -- insertion -----------------------------------------------------------

    def insert_episode(self, episode) -> None:
        validate_episode(episode, self.lengths)
        units = [(episode, False)]
        if self.augment_enabled:
            for traj in split_skill_trajectories(episode):
                dup = augment(traj, self.k_min)
                if dup is not None:
                    units.append((dup, True))
        total = sum(len(u) for u, _ in units)
        if total > self.capacity:
            raise ConfigurationError(
                f"episode (+duplicates) of {total} rows exceeds capacity {self.capacity}")
        while self.capacity - self.size < total:
            self._evict_oldest_episode()
        ep_id = self._episode_counter
        self._episode_counter += 1
        for rows, dup in units:
            self._write_block(rows, ep_id, dup)
        self.total_inserted += len(episode)

    def _evict_oldest_episode(self) -> None:
        oldest = self._blocks[0]["episode"]
        while self._blocks and self._blocks[0]["episode"] == oldest:
            self._blocks.pop(0)

    def _write_block(self, rows, ep_id: int, dup: bool) -> None:
        n = len(rows)
        idx = (self._head + np.arange(n)) % self.capacity
        self._s[idx] = [tr.s for tr in rows]
        self._a[idx] = [tr.a for tr in rows]
        self._s_next[idx] = [tr.s_next for tr in rows]
        self._r[idx] = [tr.r for tr in rows]
        self._c[idx] = [tr.c for tr in rows]
        self._i[idx] = [tr.z.i for tr in rows]
        self._k[idx] = [tr.z.k for tr in rows]
        self._k_slot[idx] = [self._slot[tr.z.k] for tr in rows]
        self._done[idx] = [tr.done for tr in rows]
        self._decision[idx] = [tr.decision_point for tr in rows]
        self._blocks.append({"start": self._head, "length": n,
                             "episode": ep_id, "dup": dup})
        self._head = (self._head + n) % self.capacity

    # -- sampling ------------------------------------------------------------

    def sample_lowlevel(self, batch: int, rng: np.random.Generator):
        """Uniform i.i.d. rows over original (non-duplicate) transitions."""
        blocks = [b for b in self._blocks if not b["dup"]]
        total = sum(b["length"] for b in blocks)
        if total == 0:
            return None
        rows = self._draw_rows(blocks, total, rng.integers(0, total, size=batch))
        return {
            "s": self._s[rows], "a": self._a[rows], "r": self._r[rows],
            "s_next": self._s_next[rows], "done": self._done[rows],
        }

    def sample_highlevel(self, n_segments: int, segment_len: int,
                         rng: np.random.Generator):
        """Contiguous fixed-length segments, uniform over valid start offsets
        of originals and duplicates alike; never crosses a block boundary."""
        blocks = [b for b in self._blocks if b["length"] >= segment_len]
        starts = np.array([b["length"] - segment_len + 1 for b in blocks], dtype=np.int64)
        total = int(starts.sum()) if blocks else 0
        if total == 0:
            return None
        u = rng.integers(0, total, size=n_segments)
        cum = np.cumsum(starts)
        bi = np.searchsorted(cum, u, side="right")
        offset = u - (cum[bi] - starts[bi])
        base = np.array([blocks[j]["start"] for j in bi], dtype=np.int64)
        rows = (base[:, None] + offset[:, None] + np.arange(segment_len)) % self.capacity
        return {
            "s": self._s[rows], "a": self._a[rows], "r": self._r[rows],
            "s_next": self._s_next[rows], "done": self._done[rows],
            "c": self._c[rows], "i": self._i[rows], "k": self._k[rows],
            "k_slot": self._k_slot[rows], "decision": self._decision[rows],
        }

    def _draw_rows(self, blocks, total, u):
        starts = np.array([b["length"] for b in blocks], dtype=np.int64)
        cum = np.cumsum(starts)
        bi = np.searchsorted(cum, u, side="right")
        offset = u - (cum[bi] - starts[bi])
        base = np.array([blocks[j]["start"] for j in bi], dtype=np.int64)
        return (base + offset) % self.capacity


# -- episode dump ------------------------------------------------------------

def dump_episode(path: str, episode) -> None:
    """Line-delimited JSON, one transition per line."""
    with open(path, "w") as f:
        for tr in episode:
            f.write(json.dumps({
                "s": list(tr.s), "a": list(tr.a),
                "z": {"i": tr.z.i, "k": tr.z.k}, "c": tr.c, "r": tr.r,
                "s_next": list(tr.s_next), "done": tr.done,
                "decision_point": tr.decision_point,
            }))
            f.write("\n")


def load_episode(path: str):
    episode = []
    with open(path) as f:
        for line in f:
            d = json.loads(line)
            episode.append(Transition(
                s=np.array(d["s"]), a=np.array(d["a"]),
                z=SchedulerAction(d["z"]["i"], d["z"]["k"]),
                c=d["c"], r=d["r"], s_next=np.array(d["s_next"]),
                done=d["done"], decision_point=d["decision_point"],
            ))
    return episode
