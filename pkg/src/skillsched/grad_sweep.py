"""Finite-difference sweep over every loss the learners optimize.

Each entry freezes its stochastic ingredients (batches, target snapshots,
E-step weights, sampled proposal/advantage actions) and exposes the loss as
a pure function of one flat parameter vector, so central differences see
exactly what the analytic gradient claims.
"""

from __future__ import annotations

import numpy as np

from .baselines import MpoConfig, MpoLearner, rhpo_reload
from .newskill import NewSkillConfig, NewSkillLearner
from .numerics import GradTape, Mlp, grad_check
from .policies import GaussianPolicy, log_softmax, softmax, uniform_mixture
from .scheduler import SchedulerConfig, SchedulerLearner, e_step_weights
from .policies import SkillSet
from .seeding import make_rng

STATE_DIM, ACTION_DIM = 4, 2
HIDDEN = (10,)


def _scheduler(seed):
    rng = make_rng(seed)
    skills = SkillSet([GaussianPolicy.create(STATE_DIM, ACTION_DIM, HIDDEN,
                                             make_rng(seed + i))
                       for i in range(2)], new_skill=None)
    cfg = SchedulerConfig(lengths=(1, 2, 3), n_options=2, hidden=HIDDEN)
    learner = SchedulerLearner(STATE_DIM, cfg, skills, rng)
    # non-degenerate nets and targets
    learner.policy.params[:] = 0.3 * rng.normal(size=learner.policy.n_params)
    learner.critic.net.params[:] = 0.3 * rng.normal(size=learner.critic.net.n_params)
    learner.target_policy.params[:] = learner.policy.params + 0.05 * rng.normal(
        size=learner.policy.n_params)
    learner.target_critic.net.params[:] = learner.critic.net.params.copy()
    return learner, rng


def scheduler_critic_loss(seed):
    learner, rng = _scheduler(seed)
    n = 8
    c = rng.integers(1, 4, size=n)
    k = np.maximum(c, rng.integers(1, 4, size=n))
    batch = {
        "s": rng.normal(size=(n, STATE_DIM)),
        "s_next": rng.normal(size=(n, STATE_DIM)),
        "r": rng.normal(size=n), "done": rng.random(n) < 0.2,
        "c": c, "i": rng.integers(0, 2, size=n), "k": k,
        "k_slot": k - 1, "decision": c == k,
    }
    target = learner._td_targets_batch(batch)
    feats = learner.critic.features(batch["s"], batch["c"], batch["i"],
                                    batch["k_slot"])
    sizes = learner.critic.net.sizes

    def loss_fn(params):
        net = Mlp(sizes, params)
        q, cache = net.forward_batch(feats)
        err = q[:, 0] - target
        tape = GradTape(net)
        net.backward_batch(cache, (2.0 / n) * err[:, None], tape)
        return float(np.mean(err ** 2)), tape.grad

    return loss_fn, learner.critic.net.params.copy()


def scheduler_policy_loss(seed):
    learner, rng = _scheduler(seed)
    states = rng.normal(size=(6, STATE_DIM))
    n_act = learner.n_idx * learner.n_len
    prior = learner.joint_probs_batch(states, learner.target_policy)
    q_vals = rng.normal(size=(6, n_act))
    q_masses, _ = e_step_weights(q_vals, prior, 0.1)
    learner.tr_index.multiplier = 1.4
    learner.tr_length.multiplier = 0.7
    t_logits, _ = learner.target_policy.forward_batch(states)
    sizes = learner.policy.sizes
    n_idx, n_len = learner.n_idx, learner.n_len
    lam_i, lam_k = learner.tr_index.multiplier, learner.tr_length.multiplier

    def loss_fn(params):
        net = Mlp(sizes, params)
        logits, cache = net.forward_batch(states)
        li, lk = logits[:, :n_idx], logits[:, n_idx:]
        ti, tk = t_logits[:, :n_idx], t_logits[:, n_idx:]
        qj = q_masses.reshape(6, n_idx, n_len)
        qi, qk = qj.sum(axis=2), qj.sum(axis=1)
        lsm_i, lsm_k = log_softmax(li, axis=1), log_softmax(lk, axis=1)
        ce = -float(np.mean(np.sum(qi * lsm_i, 1) + np.sum(qk * lsm_k, 1)))
        tpi_i, tpi_k = softmax(ti, axis=1), softmax(tk, axis=1)
        kl_i = float(np.mean(np.sum(tpi_i * (log_softmax(ti, 1) - lsm_i), 1)))
        kl_k = float(np.mean(np.sum(tpi_k * (log_softmax(tk, 1) - lsm_k), 1)))
        d_i = ((1 + lam_i) * np.exp(lsm_i) - qi - lam_i * tpi_i) / 6
        d_k = ((1 + lam_k) * np.exp(lsm_k) - qk - lam_k * tpi_k) / 6
        tape = GradTape(net)
        net.backward_batch(cache, np.concatenate([d_i, d_k], axis=1), tape)
        return ce + lam_i * kl_i + lam_k * kl_k, tape.grad

    return loss_fn, learner.policy.params.copy()


def _newskill(seed):
    learner = NewSkillLearner(STATE_DIM, ACTION_DIM,
                              NewSkillConfig(hidden=HIDDEN), make_rng(seed))
    rng = make_rng(seed + 1000)
    learner.policy.net.params[:] = 0.3 * rng.normal(size=learner.policy.net.n_params)
    learner.core.critic.params[:] = 0.3 * rng.normal(size=learner.core.critic.n_params)
    learner.core.target_policy.net.params[:] = (
        learner.policy.net.params + 0.05 * rng.normal(size=learner.policy.net.n_params))
    learner.core.target_critic.params[:] = learner.core.critic.params.copy()
    return learner, rng


def newskill_critic_loss(seed):
    learner, rng = _newskill(seed)
    n = 8
    batch = {
        "s": rng.normal(size=(n, STATE_DIM)), "a": rng.normal(size=(n, ACTION_DIM)),
        "r": rng.normal(size=n), "s_next": rng.normal(size=(n, STATE_DIM)),
        "done": rng.random(n) < 0.2,
    }
    m = learner.cfg.m_advantage
    a_next = learner.core.target_policy.sample_batch(batch["s_next"], rng, n=m)
    q_next, _ = learner.core.q_batch(learner.core.target_critic,
                                     np.repeat(batch["s_next"], m, axis=0),
                                     a_next.reshape(n * m, -1))
    v = q_next.reshape(n, m).mean(axis=1)
    target = batch["r"] + learner.cfg.gamma * np.where(batch["done"], 0.0, v)
    x = np.concatenate([batch["s"], batch["a"]], axis=1)
    sizes = learner.core.critic.sizes

    def loss_fn(params):
        net = Mlp(sizes, params)
        q, cache = net.forward_batch(x)
        err = q[:, 0] - target
        tape = GradTape(net)
        net.backward_batch(cache, (2.0 / n) * err[:, None], tape)
        return float(np.mean(err ** 2)), tape.grad

    return loss_fn, learner.core.critic.params.copy()


def newskill_crr_policy_loss(seed):
    learner, rng = _newskill(seed)
    n = 8
    states = rng.normal(size=(n, STATE_DIM))
    actions = rng.normal(size=(n, ACTION_DIM))
    weights = learner.crr_weights(learner.advantage(states, actions, rng))
    sizes = learner.policy.net.sizes

    def loss_fn(params):
        pol = GaussianPolicy(Mlp(sizes, params), ACTION_DIM)
        lp, aux = pol.log_prob_with_aux(states, actions)
        tape = GradTape(pol.net)
        pol.backward_weighted(aux, -weights / n, tape)
        return -float(np.mean(weights * lp)), tape.grad

    return loss_fn, learner.policy.net.params.copy()


def newskill_blended_policy_loss(seed, alpha=0.5):
    learner, rng = _newskill(seed)
    n = 8
    states = rng.normal(size=(n, STATE_DIM))
    actions = rng.normal(size=(n, ACTION_DIM))
    w_crr = learner.crr_weights(learner.advantage(states, actions, rng))
    a_prop, ew, _ = learner.core.e_step(states, rng)
    m = ew.shape[1]
    s_rep = np.repeat(states, m, axis=0)
    a_flat = a_prop.reshape(n * m, -1)
    target = learner.core.target_policy
    lam_mean = learner.core.tr_mean.multiplier
    lam_cov = learner.core.tr_cov.multiplier
    sizes = learner.policy.net.sizes

    def loss_fn(params):
        from .baselines import _gaussian_trust_backward
        pol = GaussianPolicy(Mlp(sizes, params), ACTION_DIM)
        tape = GradTape(pol.net)
        lp, aux = pol.log_prob_with_aux(states, actions)
        l_crr = -float(np.mean(w_crr * lp))
        pol.backward_weighted(aux, -alpha * w_crr / n, tape)
        lp2, aux2 = pol.log_prob_with_aux(s_rep, a_flat)
        l_nll = -float(np.sum(ew.reshape(-1) * lp2) / n)
        pol.backward_weighted(aux2, -(1 - alpha) * ew.reshape(-1) / n, tape)
        km, kc = _gaussian_trust_backward(pol, target, states,
                                          (1 - alpha) * lam_mean,
                                          (1 - alpha) * lam_cov, tape)
        l_mpo = l_nll + lam_mean * km + lam_cov * kc
        return alpha * l_crr + (1 - alpha) * l_mpo, tape.grad

    return loss_fn, learner.policy.net.params.copy()


def mpo_policy_loss_gaussian(seed):
    learner = MpoLearner(STATE_DIM, ACTION_DIM, MpoConfig(hidden=HIDDEN),
                         make_rng(seed))
    rng = make_rng(seed + 2000)
    learner.policy.net.params[:] = 0.3 * rng.normal(size=learner.policy.net.n_params)
    learner.target_policy.net.params[:] = (
        learner.policy.net.params + 0.05 * rng.normal(size=learner.policy.net.n_params))
    learner.tr_mean.multiplier = 1.2
    learner.tr_cov.multiplier = 0.9
    states = rng.normal(size=(5, STATE_DIM))
    actions = learner.target_policy.sample_batch(states, rng, n=6)
    weights = rng.dirichlet(np.ones(6), size=5)
    s_rep = np.repeat(states, 6, axis=0)
    a_flat = actions.reshape(30, -1)
    w_flat = weights.reshape(30)
    target = learner.target_policy
    lam_mean, lam_cov = learner.tr_mean.multiplier, learner.tr_cov.multiplier
    sizes = learner.policy.net.sizes

    def loss_fn(params):
        from .baselines import _gaussian_trust_backward
        pol = GaussianPolicy(Mlp(sizes, params), ACTION_DIM)
        lp, aux = pol.log_prob_with_aux(s_rep, a_flat)
        tape = GradTape(pol.net)
        pol.backward_weighted(aux, -w_flat / 5, tape)
        nll = -float(np.sum(w_flat * lp) / 5)
        km, kc = _gaussian_trust_backward(pol, target, states, lam_mean,
                                          lam_cov, tape)
        return nll + lam_mean * km + lam_cov * kc, tape.grad

    return loss_fn, learner.policy.net.params.copy()


def mpo_policy_loss_mixture(seed):
    rng = make_rng(seed + 3000)
    skills = [GaussianPolicy.create(STATE_DIM, ACTION_DIM, HIDDEN,
                                    make_rng(seed + 10 + i)) for i in range(2)]
    mix = rhpo_reload([s.to_doc() for s in skills], freeze=True, add_new=True,
                      hidden=HIDDEN, rng=make_rng(seed + 20))
    learner = MpoLearner(STATE_DIM, ACTION_DIM, MpoConfig(hidden=HIDDEN),
                         make_rng(seed + 30), policy=mix)
    learner.tr_cat.multiplier = 0.6
    new_net = mix.components[-1].net
    head = mix.head
    new_net.params[:] = 0.3 * rng.normal(size=new_net.n_params)
    head.params[:] = 0.3 * rng.normal(size=head.n_params)
    learner.target_policy.components[-1].net.params[:] = (
        new_net.params + 0.05 * rng.normal(size=new_net.n_params))
    learner.target_policy.head.params[:] = (
        head.params + 0.05 * rng.normal(size=head.n_params))
    states = rng.normal(size=(4, STATE_DIM))
    actions = learner.policy.sample_batch(states, rng, n=4)
    weights = rng.dirichlet(np.ones(4), size=4)
    n_new, n_head = new_net.n_params, head.n_params
    s_rep = np.repeat(states, 4, axis=0)
    a_flat = actions.reshape(16, -1)
    w_flat = weights.reshape(16)

    def loss_fn(flat):
        learner.policy.components[-1].net.params[:] = flat[:n_new]
        learner.policy.head.params[:] = flat[n_new:]
        learner._zero_tapes()
        nll = learner._weighted_nll_backward(s_rep, a_flat, w_flat, 4)
        kls = learner._trust_region_backward(states)
        grad = np.concatenate([learner._policy_tapes["comp2"].grad,
                               learner._policy_tapes["head"].grad])
        return nll + sum(lam * k for _, lam, k in kls), grad

    return loss_fn, np.concatenate([new_net.params.copy(), head.params.copy()])


def dagger_imitation_loss(seed):
    rng = make_rng(seed + 4000)
    teacher = uniform_mixture([GaussianPolicy.create(STATE_DIM, ACTION_DIM,
                                                     HIDDEN, make_rng(seed + 40))])
    student = GaussianPolicy.create(STATE_DIM, ACTION_DIM, HIDDEN,
                                    make_rng(seed + 41))
    student.net.params[:] = 0.3 * rng.normal(size=student.net.n_params)
    states = rng.normal(size=(5, STATE_DIM))
    a_teacher = teacher.sample_batch(states, rng, n=6).reshape(30, -1)
    s_rep = np.repeat(states, 6, axis=0)
    sizes = student.net.sizes

    def loss_fn(params):
        pol = GaussianPolicy(Mlp(sizes, params), ACTION_DIM)
        lp, aux = pol.log_prob_with_aux(s_rep, a_teacher)
        tape = GradTape(pol.net)
        pol.backward_weighted(aux, -np.full(30, 1.0 / 30), tape)
        return -float(np.mean(lp)), tape.grad

    return loss_fn, student.net.params.copy()


LOSSES = {
    "scheduler/critic_td": scheduler_critic_loss,
    "scheduler/policy_m_step": scheduler_policy_loss,
    "newskill/critic_td": newskill_critic_loss,
    "newskill/crr_policy": newskill_crr_policy_loss,
    "newskill/blended_policy": newskill_blended_policy_loss,
    "baselines/mpo_policy_gaussian": mpo_policy_loss_gaussian,
    "baselines/mpo_policy_mixture": mpo_policy_loss_mixture,
    "baselines/dagger_imitation": dagger_imitation_loss,
}


def run_grad_sweep(n_points: int = 10, seeds=(1, 2, 3)) -> dict:
    """Max relative FD error per loss over n_points random parameter points
    for each seed."""
    results = {}
    for name, builder in LOSSES.items():
        worst = 0.0
        for seed in seeds:
            loss_fn, base = builder(seed)
            rng = make_rng(hash((name, seed)) % (2**32))
            for _ in range(n_points):
                point = base + 0.05 * rng.normal(size=base.shape[0])
                worst = max(worst, grad_check(loss_fn, point))
        results[name] = worst
    return results
