import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from skillsched.errors import MalformedEpisodeError
from skillsched.policies import SchedulerAction
from skillsched.replay import (FlowController, ReplayBuffer, Transition,
                               augment, dump_episode, flow_gate, load_episode,
                               split_skill_trajectories, validate_episode)
from skillsched.seeding import make_rng


def make_episode(plan, state_dim=2, start_step=0, rng=None):
    """plan: list of (skill index, chosen k, steps actually taken)."""
    rng = rng or make_rng(0)
    episode, g = [], start_step
    for i, k, steps in plan:
        for off in range(steps):
            episode.append(Transition(
                s=np.array([float(g), float(i)] + [0.0] * (state_dim - 2)),
                a=rng.normal(size=1),
                z=SchedulerAction(i, k),
                c=k - off,
                r=float(g % 3 == 0),
                s_next=np.array([float(g + 1), float(i)] + [0.0] * (state_dim - 2)),
                done=False,
                decision_point=(off == 0),
            ))
            g += 1
    episode[-1].done = True
    return episode


LENGTHS = (10, 20, 30, 40, 50, 60)


def test_insert_sizes_no_augmentation():
    buf = ReplayBuffer(1000, 2, 1, LENGTHS, augment_enabled=False)
    buf.insert_episode(make_episode([(0, 50, 50), (1, 50, 50), (0, 50, 50), (1, 50, 50)]))
    assert buf.size == 200
    assert buf.size_lowlevel == 200


def test_fifo_eviction_at_episode_granularity():
    buf = ReplayBuffer(100, 2, 1, LENGTHS, augment_enabled=False)
    buf.insert_episode(make_episode([(0, 40, 40), (1, 40, 40)]))
    buf.insert_episode(make_episode([(0, 40, 40), (1, 40, 40)], start_step=1000))
    assert buf.size == 80
    batch = buf.sample_lowlevel(64, make_rng(1))
    assert np.all(batch["s"][:, 0] >= 1000)  # only the second episode remains


def test_insert_with_augmentation_stores_duplicate():
    buf = ReplayBuffer(1000, 2, 1, LENGTHS, augment_enabled=True)
    buf.insert_episode(make_episode([(0, 60, 60)]))
    assert buf.size == 120           # original + one duplicated trajectory
    assert buf.size_lowlevel == 60   # duplicates are scheduler-view only


def test_eviction_removes_duplicates_with_their_episode():
    buf = ReplayBuffer(100, 2, 1, (10, 30, 50), augment_enabled=True)
    buf.insert_episode(make_episode([(0, 50, 50)]))   # 50 + 50 duplicate
    assert buf.size == 100
    buf.insert_episode(make_episode([(1, 30, 30)], start_step=500))
    # 30 original + 30 duplicate; whole first episode group evicted
    assert buf.size == 60
    assert buf.size_lowlevel == 30


def test_augment_fig8_case():
    traj = make_episode([(3, 60, 60)])
    dup = augment(traj, 10)
    assert dup is not None
    decisions = [t for t, tr in enumerate(dup) if tr.decision_point]
    assert decisions == [0, 10, 20, 30, 40, 50]
    assert [tr.c for tr in dup] == list(range(10, 0, -1)) * 6
    assert all(tr.z == SchedulerAction(3, 10) for tr in dup)


def test_augment_idempotent_when_k_equals_kmin():
    traj = make_episode([(1, 10, 10)])
    dup = augment(traj, 10)
    assert [tr.c for tr in dup] == [tr.c for tr in traj]
    assert [tr.decision_point for tr in dup] == [tr.decision_point for tr in traj]
    assert [tr.z for tr in dup] == [tr.z for tr in traj]


def test_augment_non_multiple_returns_none():
    traj = make_episode([(1, 15, 15)])
    assert augment(traj, 10) is None


def test_augment_preserves_lowlevel_content_and_return():
    rng = make_rng(8)
    traj = make_episode([(2, 40, 40)], rng=rng)
    dup = augment(traj, 10)
    for orig, bar in zip(traj, dup):
        assert orig.s is bar.s and orig.a is bar.a and orig.s_next is bar.s_next
        assert orig.r == bar.r and orig.done == bar.done
    assert sum(tr.r for tr in dup) == sum(tr.r for tr in traj)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 20), st.integers(2, 8), st.integers(0, 10_000))
def test_augment_counter_cycle_law(j, k_min, seed):
    k_star = j * k_min
    traj = make_episode([(0, k_star, k_star)], rng=make_rng(seed))
    dup = augment(traj, k_min)
    for orig, bar in zip(traj, dup):
        assert bar.c == ((orig.c - 1) % k_min) + 1
        assert bar.z.k == k_min
    assert sum(tr.decision_point for tr in dup) == j


def test_truncated_trajectory_augments_by_offset():
    # episode ends 7 steps into a chosen 20-step execution
    traj = make_episode([(0, 20, 7)])
    dup = augment(traj, 10)
    assert [tr.c for tr in dup] == [10, 9, 8, 7, 6, 5, 4]


def test_sample_lowlevel_single_row():
    buf = ReplayBuffer(100, 2, 1, (1, 2), augment_enabled=False)
    buf.insert_episode(make_episode([(0, 1, 1)]))
    batch = buf.sample_lowlevel(4, make_rng(0))
    assert batch["s"].shape == (4, 2)
    assert np.all(batch["s"] == batch["s"][0])


def test_sample_lowlevel_uniform():
    buf = ReplayBuffer(1000, 2, 1, LENGTHS, augment_enabled=False)
    buf.insert_episode(make_episode([(0, 50, 50), (1, 50, 50)]))
    batch = buf.sample_lowlevel(100_000, make_rng(0))
    ids = batch["s"][:, 0].astype(int)
    counts = np.bincount(ids, minlength=100)
    p = 1.0 / 100
    sigma = math.sqrt(p * (1 - p) / 100_000)
    assert np.all(np.abs(counts / 100_000 - p) < 3 * sigma)


def test_duplicates_never_in_lowlevel_batches():
    # traj A (k=10) gets a duplicate, traj B (k=15) does not; if duplicates
    # leaked into the low-level view, A rows would be sampled twice as often
    buf = ReplayBuffer(1000, 2, 1, (10, 15), augment_enabled=True)
    buf.insert_episode(make_episode([(0, 10, 10), (1, 15, 15)]))
    assert buf.size == 35 and buf.size_lowlevel == 25
    batch = buf.sample_lowlevel(100_000, make_rng(6))
    ids = batch["s"][:, 0].astype(int)
    freqs = np.bincount(ids, minlength=25) / 100_000
    p = 1.0 / 25
    sigma = math.sqrt(p * (1 - p) / 100_000)
    assert np.all(np.abs(freqs - p) < 3 * sigma)


def test_sample_highlevel_segments():
    buf = ReplayBuffer(1000, 2, 1, LENGTHS, augment_enabled=False)
    buf.insert_episode(make_episode([(0, 20, 20)]))
    buf.insert_episode(make_episode([(1, 30, 30)], start_step=100))
    seg = buf.sample_highlevel(64, 5, make_rng(3))
    ids = seg["s"][:, :, 0].astype(int)
    # contiguous within a segment, never across an episode boundary
    assert np.all(np.diff(ids, axis=1) == 1)
    assert np.all((ids[:, -1] < 20) | (ids[:, 0] >= 100))

    single = buf.sample_highlevel(8, 1, make_rng(4))
    assert single["s"].shape == (8, 1, 2)


def test_sample_highlevel_not_ready():
    buf = ReplayBuffer(100, 2, 1, LENGTHS, augment_enabled=False)
    assert buf.sample_highlevel(4, 5, make_rng(0)) is None
    assert buf.sample_lowlevel(4, make_rng(0)) is None
    buf.insert_episode(make_episode([(0, 10, 10)]))
    assert buf.sample_highlevel(4, 11, make_rng(0)) is None  # no segment fits


def test_augmentation_raises_decision_density():
    def density(augment_enabled):
        buf = ReplayBuffer(1000, 2, 1, (10, 60), augment_enabled=augment_enabled)
        buf.insert_episode(make_episode([(0, 60, 60)]))
        seg = buf.sample_highlevel(50_000, 1, make_rng(9))
        return float(np.mean(seg["decision"]))

    d_off, d_on = density(False), density(True)
    # exact store densities: 1/60 without, (1 + 6)/120 with duplicates
    assert abs(d_off - 1 / 60) < 3 * math.sqrt((1 / 60) * (59 / 60) / 50_000)
    assert abs(d_on - 7 / 120) < 3 * math.sqrt((7 / 120) * (113 / 120) / 50_000)
    assert d_on > d_off


def test_malformed_episodes_rejected():
    ep = make_episode([(0, 20, 20)])
    ep[5].c = 99
    with pytest.raises(MalformedEpisodeError):
        validate_episode(ep, LENGTHS)

    ep = make_episode([(0, 20, 20)])
    ep[5].decision_point = True
    with pytest.raises(MalformedEpisodeError):
        validate_episode(ep, LENGTHS)

    ep = make_episode([(0, 20, 20)])
    ep[5].z = SchedulerAction(1, 20)
    with pytest.raises(MalformedEpisodeError):
        validate_episode(ep, LENGTHS)

    with pytest.raises(MalformedEpisodeError):
        validate_episode([], LENGTHS)

    buf = ReplayBuffer(100, 2, 1, LENGTHS)
    bad = make_episode([(0, 20, 20)])
    bad[0].c = 3
    with pytest.raises(MalformedEpisodeError):
        buf.insert_episode(bad)


def test_segment_laws_of_valid_episode():
    ep = make_episode([(0, 20, 20), (1, 30, 30), (0, 10, 5)])
    validate_episode(ep, LENGTHS)
    runs = split_skill_trajectories(ep)
    assert [len(r) for r in runs] == [20, 30, 5]
    for run in runs:
        assert run[0].decision_point and run[0].c == run[0].z.k
        assert all(a.c - 1 == b.c for a, b in zip(run, run[1:]))


def test_flow_gate_examples():
    ctrl = FlowController(samples_per_insert=50)
    assert flow_gate(ctrl, inserts=10, samples=0)
    assert not flow_gate(ctrl, inserts=10, samples=500)
    assert not flow_gate(ctrl, inserts=0, samples=0)


def test_flow_gate_long_run_ratio():
    ctrl = FlowController(samples_per_insert=50)
    batch = 64
    for _ in range(100_000):
        ctrl.note_insert(1)
        while ctrl.gate():
            ctrl.note_samples(batch)
    assert abs(ctrl.achieved_ratio() - 50.0) < 0.5  # within 1%


def test_episode_dump_roundtrip(tmp_path):
    ep = make_episode([(0, 20, 20), (1, 10, 10)])
    path = str(tmp_path / "episode.jsonl")
    dump_episode(path, ep)
    back = load_episode(path)
    assert len(back) == len(ep)
    for a, b in zip(ep, back):
        assert np.array_equal(a.s, b.s) and np.array_equal(a.a, b.a)
        assert a.z == b.z and a.c == b.c and a.r == b.r
        assert a.done == b.done and a.decision_point == b.decision_point
