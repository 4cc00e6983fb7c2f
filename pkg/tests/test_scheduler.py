import math
from types import SimpleNamespace

import numpy as np
import pytest

from skillsched import oracle_mdp
from skillsched.numerics import GradTape, Mlp, grad_check
from skillsched.policies import GaussianPolicy, SkillSet, softmax
from skillsched.scheduler import (InitBias, SchedulerConfig, SchedulerLearner,
                                  Targets, e_step_weights, td_target)
from skillsched.seeding import make_rng

LENGTHS = (1, 2, 3)


def make_learner(seed=0, n_skills=2, state_dim=3, lengths=LENGTHS, **cfg_kw):
    rng = make_rng(seed)
    skills = SkillSet([GaussianPolicy.create(state_dim, 1, (4,), make_rng(seed + i))
                       for i in range(n_skills)], new_skill=None)
    cfg = SchedulerConfig(lengths=lengths, n_options=n_skills, **cfg_kw)
    return SchedulerLearner(state_dim, cfg, skills, rng)


def stub_targets(q_const, lengths=LENGTHS, n_skills=2):
    probs = np.full((n_skills, len(lengths)), 1.0 / (n_skills * len(lengths)))
    return Targets(q=lambda s, c, i, slot: q_const, probs=lambda s: probs,
                   lengths=lengths)


def test_td_target_gamma_zero():
    targets = stub_targets(123.0)
    for c, done in [(1, False), (5, False), (2, True)]:
        tr = SimpleNamespace(s_next=0, c=c, i=0, k=3, r=0.7, done=done)
        assert td_target(tr, targets, gamma=0.0) == pytest.approx(0.7)


def test_td_target_mid_skill_branch():
    # counter 4 -> successor continues at c=3; stub critic Q=5, r=1, gamma=.9
    targets = stub_targets(5.0)
    tr = SimpleNamespace(s_next=0, c=4, i=1, k=3, r=1.0, done=False)
    assert td_target(tr, targets, gamma=0.9) == pytest.approx(5.5)


def test_td_target_decision_branch_enumerates():
    lengths = (1, 2)
    probs = np.array([[0.5, 0.25], [0.125, 0.125]])
    seen = []

    def q(s, c, i, slot):
        seen.append((c, i, slot))
        return float(10 * i + c)

    targets = Targets(q=q, probs=lambda s: probs, lengths=lengths)
    tr = SimpleNamespace(s_next=0, c=1, i=0, k=1, r=0.0, done=False)
    got = td_target(tr, targets, gamma=1.0)
    # candidates evaluated at their own full counter c' = k'
    want = (0.5 * 1 + 0.25 * 2) + (0.125 * 11 + 0.125 * 12)
    assert got == pytest.approx(want)
    assert set(seen) == {(1, 0, 0), (2, 0, 1), (1, 1, 0), (2, 1, 1)}


def test_oracle_mdp_td_converges_to_linear_solve():
    sweeps, err, monotone = oracle_mdp.run_convergence_check(gamma=0.9, tol=1e-5)
    assert err < 1e-5
    assert sweeps < 10_000
    assert monotone  # contraction on the augmented chain


def test_counter_blind_critic_cannot_fix_point():
    residual = oracle_mdp.counter_blind_residual(gamma=0.9)
    assert residual > 1e-3


def make_batch(learner, rng, n=16, decision_frac=0.5):
    sd = learner.state_dim
    c = rng.integers(1, 4, size=n)
    k = np.array([learner.lengths[min(ci - 1, len(learner.lengths) - 1)] for ci in c])
    k = np.maximum(k, c)  # keep c <= k
    k_slot = np.array([learner.lengths.index(kv) for kv in k])
    decision = (c == k) & (rng.random(n) < decision_frac)
    return {
        "s": rng.normal(size=(n, sd)), "s_next": rng.normal(size=(n, sd)),
        "r": rng.normal(size=n), "done": rng.random(n) < 0.1,
        "c": c, "i": rng.integers(0, learner.n_idx, size=n),
        "k": k, "k_slot": k_slot, "decision": decision,
    }


def test_critic_update_zero_when_consistent():
    # zero-initialized critic, zero rewards: Q == target everywhere
    learner = make_learner(seed=1)
    rng = make_rng(2)
    batch = make_batch(learner, rng)
    batch["r"] = np.zeros_like(batch["r"])
    before = learner.critic.net.params.copy()
    loss = learner.critic_update(batch)
    assert loss == 0.0
    assert np.max(np.abs(learner.critic.net.params - before)) < 1e-12


def test_critic_update_overfits_fixed_batch():
    # huge target period keeps the snapshot frozen: pure full-batch regression
    learner = make_learner(seed=3, lr=1e-3, target_critic_period=10**6)
    rng = make_rng(4)
    batch = make_batch(learner, rng, n=32)
    losses = [learner.critic_update(batch) for _ in range(100)]
    assert losses[-1] < losses[0]
    assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))


def test_critic_gradient_matches_finite_differences():
    learner = make_learner(seed=5)
    rng = make_rng(6)
    batch = make_batch(learner, rng, n=8)
    target = learner._td_targets_batch(batch)
    feats = learner.critic.features(batch["s"], batch["c"], batch["i"],
                                    batch["k_slot"])
    sizes = learner.critic.net.sizes
    rng2 = make_rng(7)
    base = learner.critic.net.params + 0.05 * rng2.normal(size=learner.critic.net.n_params)

    def loss_fn(params):
        net = Mlp(sizes, params)
        q, cache = net.forward_batch(feats)
        err = q[:, 0] - target
        tape = GradTape(net)
        net.backward_batch(cache, (2.0 / len(err)) * err[:, None], tape)
        return float(np.mean(err ** 2)), tape.grad

    assert grad_check(loss_fn, base) < 1e-4


def test_e_step_equal_q_returns_prior():
    rng = make_rng(8)
    prior = rng.dirichlet(np.ones(6), size=4)
    q_vals = np.full((4, 6), 3.3)
    q, _eta = e_step_weights(q_vals, prior, eps=0.1)
    assert np.max(np.abs(q - prior)) < 1e-10


def test_e_step_shift_invariance():
    rng = make_rng(9)
    prior = rng.dirichlet(np.ones(5), size=3)
    q_vals = rng.normal(size=(3, 5))
    q1, _ = e_step_weights(q_vals, prior, eps=0.1)
    q2, _ = e_step_weights(q_vals + 57.0, prior, eps=0.1)
    assert np.max(np.abs(q1 - q2)) < 1e-10


def kl_rows(q, prior):
    return np.sum(q * (np.log(q) - np.log(prior)), axis=1)


def test_e_step_hits_kl_bound_vs_golden_section_oracle():
    prior = np.full((1, 4), 0.25)
    q_vals = np.array([[1.0, 0.0, 0.0, 0.0]])
    eps = 0.1
    q, eta = e_step_weights(q_vals, prior, eps)
    kl = float(kl_rows(q, prior)[0])
    assert abs(kl - eps) < 1e-3

    # independent oracle: golden-section minimization of the 1-d dual
    def g(eta):
        z = np.log(np.sum(prior[0] * np.exp(q_vals[0] / eta)))
        return eta * eps + eta * z

    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = math.log(1e-6), math.log(1e3)
    c, d = b - inv_phi * (b - a), a + inv_phi * (b - a)
    fc, fd = g(math.exp(c)), g(math.exp(d))
    for _ in range(200):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - inv_phi * (b - a)
            fc = g(math.exp(c))
        else:
            a, c, fc = c, d, fd
            d = a + inv_phi * (b - a)
            fd = g(math.exp(d))
    eta_oracle = math.exp(0.5 * (a + b))
    w_oracle = softmax(q_vals[0] / eta_oracle)
    assert abs(eta - eta_oracle) < 1e-3 * eta_oracle
    assert np.max(np.abs(q[0] - w_oracle)) < 1e-4


def test_e_step_kl_bound_random_batches():
    rng = make_rng(10)
    for _ in range(25):
        prior = rng.dirichlet(np.ones(8), size=6)
        q_vals = 3.0 * rng.normal(size=(6, 8))
        eps = 0.1
        q, _ = e_step_weights(q_vals, prior, eps)
        batch_kl = float(np.mean(kl_rows(q, prior)))
        assert batch_kl <= eps + 1e-3


def test_m_step_noop_at_fixed_point():
    learner = make_learner(seed=11)  # zero head -> uniform policy == target
    rng = make_rng(12)
    states = rng.normal(size=(6, 3))
    n_act = learner.n_idx * learner.n_len
    q = np.full((6, n_act), 1.0 / n_act)
    before = learner.policy.params.copy()
    learner.m_step(states, q)
    assert np.max(np.abs(learner.policy.params - before)) < 1e-12


def test_policy_update_skips_batches_without_decisions():
    learner = make_learner(seed=13)
    rng = make_rng(14)
    batch = make_batch(learner, rng)
    batch["decision"][:] = False
    before = learner.policy.params.copy()
    assert learner.policy_update(batch) is None
    assert np.array_equal(learner.policy.params, before)


def test_m_step_gradient_matches_finite_differences():
    learner = make_learner(seed=15)
    rng = make_rng(16)
    states = rng.normal(size=(5, 3))
    n_act = learner.n_idx * learner.n_len
    q = rng.dirichlet(np.ones(n_act), size=5)
    learner.tr_index.multiplier = 1.7
    learner.tr_length.multiplier = 0.6
    sizes = learner.policy.sizes
    t_logits, _ = learner.target_policy.forward_batch(states)
    base = learner.policy.params + 0.05 * rng.normal(size=learner.policy.n_params)

    def loss_fn(params):
        from skillsched.policies import log_softmax
        net = Mlp(sizes, params)
        logits, cache = net.forward_batch(states)
        li, lk = logits[:, : learner.n_idx], logits[:, learner.n_idx :]
        ti, tk = t_logits[:, : learner.n_idx], t_logits[:, learner.n_idx :]
        qj = q.reshape(5, learner.n_idx, learner.n_len)
        qi, qk = qj.sum(axis=2), qj.sum(axis=1)
        lsm_i, lsm_k = log_softmax(li, axis=1), log_softmax(lk, axis=1)
        ce = -float(np.mean(np.sum(qi * lsm_i, 1) + np.sum(qk * lsm_k, 1)))
        tpi_i, tpi_k = softmax(ti, axis=1), softmax(tk, axis=1)
        kl_i = float(np.mean(np.sum(tpi_i * (log_softmax(ti, 1) - lsm_i), 1)))
        kl_k = float(np.mean(np.sum(tpi_k * (log_softmax(tk, 1) - lsm_k), 1)))
        lam_i, lam_k = learner.tr_index.multiplier, learner.tr_length.multiplier
        loss = ce + lam_i * kl_i + lam_k * kl_k
        d_i = ((1 + lam_i) * np.exp(lsm_i) - qi - lam_i * tpi_i) / 5
        d_k = ((1 + lam_k) * np.exp(lsm_k) - qk - lam_k * tpi_k) / 5
        tape = GradTape(net)
        net.backward_batch(cache, np.concatenate([d_i, d_k], axis=1), tape)
        return loss, tape.grad

    assert grad_check(loss_fn, base) < 1e-4


def test_m_step_bandit_convergence():
    learner = make_learner(seed=17, lr=0.02, target_policy_period=25)
    state = np.zeros((8, 3))
    n_act = learner.n_idx * learner.n_len
    q = np.zeros((8, n_act))
    q[:, 4] = 1.0  # one-hot target action
    for _ in range(3000):
        learner.m_step(state, q)
    joint = learner.joint_probs_batch(state[:1], learner.policy)[0]
    assert joint[4] > 0.99


def test_apply_init_bias_masses():
    lengths = tuple(range(5, 55, 5))
    learner = make_learner(seed=18, lengths=lengths)
    masses = np.full(10, 0.005)
    masses[-1] = 0.95
    learner.apply_init_bias(InitBias(length_masses=masses))
    rng = make_rng(19)
    for _ in range(5):  # state-independent by construction
        dist = learner.dist(rng.normal(size=3))
        want = masses / masses.sum()
        assert np.max(np.abs(dist.length_probs() - want)) < 1e-6
        assert dist.length_probs()[-1] == pytest.approx(0.95 / 0.995, abs=1e-9)

    draws = 100_000
    dist = learner.dist(np.zeros(3))
    hits = sum(dist.sample(rng).k == 50 for _ in range(draws))
    p = 0.95 / 0.995
    sigma = math.sqrt(p * (1 - p) / draws)
    assert abs(hits / draws - p) < 3 * sigma


def test_apply_init_bias_uniform():
    learner = make_learner(seed=20)
    learner.apply_init_bias(InitBias(length_masses=np.ones(3)))
    dist = learner.dist(np.zeros(3))
    assert np.max(np.abs(dist.length_logits - dist.length_logits[0])) < 1e-12


def test_act_counter_law():
    learner = make_learner(seed=21)
    rng = make_rng(22)
    state = np.zeros(3)
    a, (z, c), decision = learner.act(state, None, rng)
    assert decision and c == z.k and a.shape == (1,)
    seen = [(z, c, decision)]
    current = (z, c)
    for _ in range(10):
        a, current, decision = learner.act(state, current, rng)
        seen.append((current[0], current[1], decision))
    # within an execution: same z, counter strictly decreasing to 1, then fresh
    for (z0, c0, _), (z1, c1, d1) in zip(seen, seen[1:]):
        if c0 == 1:
            assert d1 and c1 == z1.k
        else:
            assert not d1 and z1 == z0 and c1 == c0 - 1


def test_act_execution_statistics():
    learner = make_learner(seed=23)
    rng = make_rng(24)
    state = np.zeros(3)
    chosen, runs = [], []
    current, run = None, 0
    for _ in range(200):
        _, current, decision = learner.act(state, current, rng)
        if decision:
            if run:
                runs.append(run)
            run = 1
            chosen.append(current[0].k)
        else:
            run += 1
    runs.append(run)
    # every completed run's length equals its chosen k
    for k, r in zip(chosen[:-1], runs[:-1]):
        assert k == r
    assert abs(np.mean(runs[:-1]) - np.mean(chosen[:-1])) < 1e-12


def test_scheduler_checkpoint_roundtrip():
    learner = make_learner(seed=25)
    rng = make_rng(26)
    for _ in range(3):
        learner.critic_update(make_batch(learner, rng))
    doc = learner.to_doc()
    assert doc["policy_kind"] == "factored_categorical"
    other = make_learner(seed=99)
    other.load_doc(doc)
    assert np.array_equal(other.policy.params, learner.policy.params)
    assert np.array_equal(other.critic.net.params, learner.critic.net.params)
