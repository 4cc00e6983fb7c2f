"""Experiment orchestration: pretraining skills, the single-actor training
loop for the skill-sequencing method and its baselines, the evaluation
protocol, ablation suites, and the metrics CSV.

Everything a run does is a pure function of its RunConfig (seed included):
reruns produce byte-identical CSVs. Wall-clock timing therefore goes to a
sidecar file unless explicitly routed into the CSV.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from jsonschema import Draft202012Validator

from .baselines import DaggerLearner, KlRegLearner, MpoConfig, MpoLearner, rhpo_reload
from .envs import make_task
from .errors import ConfigurationError, NumericalAbort
from .newskill import NewSkillConfig, NewSkillLearner
from .numerics import read_json, write_json
from .policies import (GaussianPolicy, MixturePolicy, SchedulerAction,
                       SkillSet, policy_from_doc, uniform_mixture)
from .replay import FlowController, ReplayBuffer, Transition
from .scheduler import InitBias, SchedulerConfig, SchedulerLearner
from .seeding import make_rng, root_sequence

log = logging.getLogger(__name__)

METHODS = ("skills", "mpo", "rhpo", "klreg", "dagger")
DEFAULT_LENGTHS = tuple(range(5, 55, 5))


@dataclass
class RunConfig:
    method: str
    task: str
    seed: int = 1
    episodes: int = 300
    skills: list = field(default_factory=list)      # skill checkpoint paths
    out_dir: str = "runs/run"
    # scheduler action space
    lengths: tuple = DEFAULT_LENGTHS
    init_bias_top: float = 0.95                     # mass on largest length
    init_bias_rest: float = 0.005
    include_new_skill: bool = True
    augmentation: bool = True
    dense_reward: bool = False                      # use the dense task variant
    episode_len: int | None = None                  # TaskSpec override
    # replay and flow control
    replay_capacity: int = 200_000
    min_replay_lowlevel: int = 1_000
    min_replay_highlevel: int = 800
    spi_lowlevel: float = 16.0
    spi_highlevel: float = 16.0
    batch_lowlevel: int = 64
    batch_highlevel: int = 64
    segment_len: int = 10
    # learner hyperparameters
    gamma: float = 0.99
    lr: float = 3e-4
    scheduler_lr: float = 1e-4
    hidden: tuple = (64, 64)
    alpha: float = 1.0
    alpha_dagger: float = 1.0
    klreg_eps: float = 0.1
    rhpo_freeze: bool = True
    eps_estep: float = 0.1
    eps_mean: float = 5e-3
    eps_cov: float = 1e-5
    crr_beta: float = 1.0
    crr_w_max: float = 20.0
    crr_m: int = 4
    m_proposal: int = 20
    # evaluation
    eval_period: int = 20
    eval_episodes: int = 5
    success_threshold: float = 0.8
    timing_in_csv: bool = False
    arm: str = ""                                   # suite bookkeeping label


CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["method", "task"],
    "additionalProperties": False,
    "properties": {
        "method": {"enum": list(METHODS)},
        "task": {"type": "string"},
        "seed": {"type": "integer", "minimum": 0},
        "episodes": {"type": "integer", "minimum": 1},
        "skills": {"type": "array", "items": {"type": "string"}},
        "out_dir": {"type": "string"},
        "lengths": {"type": "array", "items": {"type": "integer", "minimum": 1},
                    "minItems": 1},
        "init_bias_top": {"type": "number", "exclusiveMinimum": 0},
        "init_bias_rest": {"type": "number", "exclusiveMinimum": 0},
        "include_new_skill": {"type": "boolean"},
        "augmentation": {"type": "boolean"},
        "dense_reward": {"type": "boolean"},
        "episode_len": {"type": ["integer", "null"], "minimum": 1},
        "replay_capacity": {"type": "integer", "minimum": 1},
        "min_replay_lowlevel": {"type": "integer", "minimum": 1},
        "min_replay_highlevel": {"type": "integer", "minimum": 1},
        "spi_lowlevel": {"type": "number", "exclusiveMinimum": 0},
        "spi_highlevel": {"type": "number", "exclusiveMinimum": 0},
        "batch_lowlevel": {"type": "integer", "minimum": 1},
        "batch_highlevel": {"type": "integer", "minimum": 1},
        "segment_len": {"type": "integer", "minimum": 1},
        "gamma": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
        "lr": {"type": "number", "exclusiveMinimum": 0},
        "scheduler_lr": {"type": "number", "exclusiveMinimum": 0},
        "hidden": {"type": "array", "items": {"type": "integer", "minimum": 1}},
        "alpha": {"type": "number", "minimum": 0, "maximum": 1},
        "alpha_dagger": {"type": "number", "minimum": 0, "maximum": 1},
        "klreg_eps": {"type": "number", "exclusiveMinimum": 0},
        "rhpo_freeze": {"type": "boolean"},
        "eps_estep": {"type": "number", "exclusiveMinimum": 0},
        "eps_mean": {"type": "number", "exclusiveMinimum": 0},
        "eps_cov": {"type": "number", "exclusiveMinimum": 0},
        "crr_beta": {"type": "number", "exclusiveMinimum": 0},
        "crr_w_max": {"type": "number", "minimum": 1},
        "crr_m": {"type": "integer", "minimum": 2},
        "m_proposal": {"type": "integer", "minimum": 2},
        "eval_period": {"type": "integer", "minimum": 1},
        "eval_episodes": {"type": "integer", "minimum": 1},
        "success_threshold": {"type": "number"},
        "timing_in_csv": {"type": "boolean"},
        "arm": {"type": "string"},
    },
}

_VALIDATOR = Draft202012Validator(CONFIG_SCHEMA)


def config_from_dict(doc: dict) -> RunConfig:
    errors = sorted(_VALIDATOR.iter_errors(doc), key=lambda e: e.path)
    if errors:
        msgs = "; ".join(f"{'/'.join(map(str, e.path)) or '<root>'}: {e.message}"
                         for e in errors)
        raise ConfigurationError(f"invalid run config: {msgs}")
    doc = dict(doc)
    for key in ("lengths", "hidden"):
        if key in doc:
            doc[key] = tuple(doc[key])
    return RunConfig(**doc)


def load_config(path: str) -> RunConfig:
    return config_from_dict(read_json(path))


def config_to_dict(cfg: RunConfig) -> dict:
    doc = asdict(cfg)
    doc["lengths"] = list(cfg.lengths)
    doc["hidden"] = list(cfg.hidden)
    return doc


def _load_skill(path: str) -> GaussianPolicy:
    doc = read_json(path)
    pol = policy_from_doc(doc)
    if not isinstance(pol, GaussianPolicy):
        raise ConfigurationError(f"{path} is not a gaussian skill checkpoint")
    return pol


# -- the run -------------------------------------------------------------------


class _SkillStats:
    """Per-skill selection counts and consecutive-execution lengths."""

    def __init__(self, n_options: int):
        self.n = n_options
        self.reset()

    def reset(self):
        self.selections = np.zeros(self.n, dtype=np.int64)
        self.exec_steps: list[list[int]] = [[] for _ in range(self.n)]

    def note_episode(self, executions):
        for i, steps in executions:
            self.selections[i] += 1
            self.exec_steps[i].append(steps)

    def mean_exec(self):
        return [float(np.mean(s)) if s else 0.0 for s in self.exec_steps]


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


class Run:
    """One seeded training run; owns the env, learners, replay and metrics."""

    def __init__(self, cfg: RunConfig):
        if cfg.method not in METHODS:
            raise ConfigurationError(f"unknown method {cfg.method!r}")
        self.cfg = cfg
        self.env, self.spec, self.manifest = make_task(cfg.task,
                                                       pretrain=cfg.dense_reward)
        if cfg.episode_len:
            self.spec.episode_len = cfg.episode_len
        self.T = self.spec.episode_len
        seq = root_sequence(cfg.seed)
        (self._ss_env, self._ss_actor, self._ss_learn,
         self._ss_eval, self._ss_init) = seq.spawn(5)
        self.env_rng = make_rng(self._ss_env)
        self.actor_rng = make_rng(self._ss_actor)
        self.learn_rng = make_rng(self._ss_learn)
        self.eval_rng = make_rng(self._ss_eval)
        init_rng = make_rng(self._ss_init)

        skill_docs = [read_json(p) for p in cfg.skills]
        self.skill_names = [os.path.splitext(os.path.basename(p))[0]
                            for p in cfg.skills]
        self.loaded_skills = []
        for path, doc in zip(cfg.skills, skill_docs):
            pol = policy_from_doc({k: v for k, v in doc.items()
                                   if k not in ("provenance",)})
            if not isinstance(pol, GaussianPolicy):
                raise ConfigurationError(f"{path} is not a gaussian skill")
            self.loaded_skills.append(pol)

        sd, ad = self.spec.obs_dim, self.spec.action_dim
        self.scheduler = None
        self.newskill = None
        self.learner = None

        if cfg.method == "skills":
            if not self.loaded_skills:
                raise ConfigurationError("skills method needs skill checkpoints")
            self.newskill = NewSkillLearner(sd, ad, self._newskill_cfg(), init_rng)
            new_pol = self.newskill.policy if cfg.include_new_skill else None
            self.skills = SkillSet(self.loaded_skills, new_pol,
                                   names=self.skill_names)
            sched_cfg = SchedulerConfig(
                lengths=cfg.lengths, n_options=self.skills.n_options,
                gamma=cfg.gamma, lr=cfg.scheduler_lr, eps_estep=cfg.eps_estep,
                hidden=cfg.hidden)
            self.scheduler = SchedulerLearner(sd, sched_cfg, self.skills, init_rng)
            masses = np.full(len(cfg.lengths), cfg.init_bias_rest)
            masses[int(np.argmax(cfg.lengths))] = cfg.init_bias_top
            self.scheduler.apply_init_bias(InitBias(length_masses=masses))
        elif cfg.method == "mpo":
            if cfg.skills:
                log.warning("method 'mpo' ignores the skill list; running from scratch")
            self.learner = MpoLearner(sd, ad, self._mpo_cfg(), init_rng)
        elif cfg.method == "rhpo":
            docs = [s.to_doc() for s in self.loaded_skills]
            mix = rhpo_reload(docs, freeze=cfg.rhpo_freeze, add_new=True,
                              hidden=cfg.hidden, rng=init_rng)
            self.learner = MpoLearner(sd, ad, self._mpo_cfg(), init_rng, policy=mix)
        elif cfg.method == "klreg":
            prior = uniform_mixture(self.loaded_skills)
            mpo_cfg = self._mpo_cfg()
            mpo_cfg.eps_estep = cfg.klreg_eps
            self.learner = KlRegLearner(sd, ad, mpo_cfg, init_rng, prior)
        elif cfg.method == "dagger":
            teacher = uniform_mixture(self.loaded_skills)
            self.learner = DaggerLearner(sd, ad, self._mpo_cfg(), init_rng,
                                         teacher, alpha_dagger=cfg.alpha_dagger)

        lengths = cfg.lengths if cfg.method == "skills" else (1,)
        self.buffer = ReplayBuffer(cfg.replay_capacity, sd, ad, lengths,
                                   augment_enabled=(cfg.augmentation and
                                                    cfg.method == "skills"))
        self.low_flow = FlowController(cfg.spi_lowlevel)
        self.high_flow = FlowController(cfg.spi_highlevel)
        self.stats = _SkillStats(self.skills.n_options) if cfg.method == "skills" \
            else None
        self.env_steps = 0
        self.learner_updates = 0
        self.rows: list[dict] = []
        self._timings: list[float] = []

    def _newskill_cfg(self) -> NewSkillConfig:
        c = self.cfg
        return NewSkillConfig(gamma=c.gamma, lr=c.lr, beta=c.crr_beta,
                              m_advantage=c.crr_m, w_max=c.crr_w_max,
                              alpha=c.alpha, hidden=c.hidden,
                              eps_estep=c.eps_estep, eps_mean=c.eps_mean,
                              eps_cov=c.eps_cov, m_proposal=c.m_proposal)

    def _mpo_cfg(self) -> MpoConfig:
        c = self.cfg
        return MpoConfig(gamma=c.gamma, lr=c.lr, eps_estep=c.eps_estep,
                         eps_mean=c.eps_mean, eps_cov=c.eps_cov,
                         m_proposal=c.m_proposal, m_bootstrap=c.crr_m,
                         hidden=c.hidden)

    # -- acting ---------------------------------------------------------------

    def _collect_episode(self):
        obs = self.env.reset(self.env_rng)
        episode, executions = [], []
        current = None
        run_i, run_steps = None, 0
        for _ in range(self.T):
            if self.cfg.method == "skills":
                a, current, decision = self.scheduler.act(obs, current,
                                                          self.actor_rng)
                z, c = current
                if decision:
                    if run_i is not None:
                        executions.append((run_i, run_steps))
                    run_i, run_steps = z.i, 0
                run_steps += 1
            else:
                a = self._baseline_action(obs)
                z, c, decision = SchedulerAction(0, 1), 1, True
            nxt, r, done = self.env.step(a)
            episode.append(Transition(s=obs, a=np.asarray(a, dtype=float), z=z,
                                      c=c, r=r, s_next=nxt, done=done,
                                      decision_point=decision))
            obs = nxt
            self.env_steps += 1
            if done:
                break
        if run_i is not None:
            executions.append((run_i, run_steps))
        return episode, executions

    def _baseline_action(self, obs):
        pol = self.learner.policy
        return pol.sample(obs, self.actor_rng)

    # -- learning ---------------------------------------------------------------

    def _learn(self):
        c = self.cfg
        if c.method == "skills":
            while (self.buffer.size_lowlevel >= c.min_replay_lowlevel
                   and self.low_flow.gate()):
                batch = self.buffer.sample_lowlevel(c.batch_lowlevel, self.learn_rng)
                self.newskill.critic_update(batch, self.learn_rng)
                self.newskill.policy_update(batch, self.learn_rng)
                self.low_flow.note_samples(c.batch_lowlevel)
                self.learner_updates += 1
            n_seg = max(1, c.batch_highlevel // c.segment_len)
            while (self.buffer.size >= c.min_replay_highlevel
                   and self.high_flow.gate()):
                seg = self.buffer.sample_highlevel(n_seg, c.segment_len,
                                                   self.learn_rng)
                if seg is None:
                    break
                batch = {k: (v.reshape(-1, *v.shape[2:]) if v.ndim > 2
                             else v.reshape(-1)) for k, v in seg.items()}
                self.scheduler.critic_update(batch)
                self.scheduler.policy_update(batch)
                self.high_flow.note_samples(n_seg * c.segment_len)
                self.learner_updates += 1
            return
        while (self.buffer.size_lowlevel >= c.min_replay_lowlevel
               and self.low_flow.gate()):
            batch = self.buffer.sample_lowlevel(c.batch_lowlevel, self.learn_rng)
            if not (c.method == "dagger" and c.alpha_dagger == 1.0):
                self.learner.critic_update(batch, self.learn_rng)
            self.learner.policy_update(batch, self.learn_rng)
            self.low_flow.note_samples(c.batch_lowlevel)
            self.learner_updates += 1

    # -- evaluation ---------------------------------------------------------------

    def _greedy_policy_action(self, policy, obs):
        if isinstance(policy, MixturePolicy):
            lw, _ = policy.log_weights_batch(np.asarray(obs, dtype=float)[None, :])
            comp = int(np.argmax(lw[0]))
            return policy.components[comp].mean_action(obs)
        return policy.mean_action(obs)

    def _eval_solo(self, policy) -> float:
        """Greedy full-episode rollouts; mean return."""
        returns = []
        for _ in range(self.cfg.eval_episodes):
            env, spec, _ = make_task(self.cfg.task, pretrain=self.cfg.dense_reward)
            if self.cfg.episode_len:
                spec.episode_len = self.cfg.episode_len
            obs = env.reset(self.eval_rng)
            total, done = 0.0, False
            while not done:
                obs, r, done = env.step(self._greedy_policy_action(policy, obs))
                total += r
            returns.append(total)
        return float(np.mean(returns))

    def _eval_scheduler(self) -> float:
        returns = []
        for _ in range(self.cfg.eval_episodes):
            env, spec, _ = make_task(self.cfg.task, pretrain=self.cfg.dense_reward)
            if self.cfg.episode_len:
                spec.episode_len = self.cfg.episode_len
            obs = env.reset(self.eval_rng)
            total, done, current = 0.0, False, None
            while not done:
                a, current, _ = self.scheduler.act(obs, current, self.eval_rng)
                obs, r, done = env.step(a)
                total += r
            returns.append(total)
        return float(np.mean(returns))

    def _eval_row(self, episode_idx: int, wall_s: float) -> dict:
        row = {"episode": episode_idx, "env_steps": self.env_steps,
               "learner_updates": self.learner_updates}
        if self.cfg.method == "skills":
            row["eval_return_newskill"] = self._eval_solo(self.newskill.policy)
            row["eval_return_scheduler"] = self._eval_scheduler()
            for name, ex in zip(self.skills.names, self.stats.mean_exec()):
                row[f"exec_{name}"] = ex
            for name, n_sel in zip(self.skills.names, self.stats.selections):
                row[f"sel_{name}"] = int(n_sel)
            self.stats.reset()
        else:
            row["eval_return_newskill"] = self._eval_solo(self.learner.policy)
            row["eval_return_scheduler"] = ""
        row["wall_clock_s"] = wall_s if self.cfg.timing_in_csv else 0.0
        return row

    # -- main loop ---------------------------------------------------------------

    def execute(self) -> str:
        cfg = self.cfg
        os.makedirs(cfg.out_dir, exist_ok=True)
        csv_path = os.path.join(cfg.out_dir, "metrics.csv")
        write_json(os.path.join(cfg.out_dir, "run.json"),
                   {"config": config_to_dict(cfg), "status": "running"})
        status = "ok"
        t0 = time.monotonic()
        writer = None
        try:
            with open(csv_path, "w", newline="") as f:
                for ep in range(1, cfg.episodes + 1):
                    episode, executions = self._collect_episode()
                    self.buffer.insert_episode(episode)
                    self.low_flow.note_insert(len(episode))
                    self.high_flow.note_insert(len(episode))
                    if self.stats is not None:
                        self.stats.note_episode(executions)
                    self._learn()
                    if ep % cfg.eval_period == 0 or ep == cfg.episodes:
                        size_before = self.buffer.size
                        wall = time.monotonic() - t0
                        row = self._eval_row(ep, wall)
                        assert self.buffer.size == size_before
                        self._timings.append(wall)
                        if writer is None:
                            writer = csv.writer(f)
                            writer.writerow(list(row.keys()))
                        writer.writerow([_fmt(v) for v in row.values()])
                        f.flush()
                        self.rows.append(row)
        except NumericalAbort as exc:
            status = "aborted_numerical"
            log.error("numerical abort: %s", exc)
            with open(csv_path, "a", newline="") as f:
                f.write(f"# aborted_numerical: {exc}\n")
        self._write_checkpoints()
        write_json(os.path.join(cfg.out_dir, "run.json"),
                   {"config": config_to_dict(cfg), "status": status})
        write_json(os.path.join(cfg.out_dir, "timing.json"),
                   {"eval_wall_clock_s": self._timings,
                    "total_wall_clock_s": time.monotonic() - t0})
        if status != "ok":
            raise NumericalAbort(status)
        return csv_path

    def _write_checkpoints(self):
        out = self.cfg.out_dir
        if self.cfg.method == "skills":
            write_json(os.path.join(out, "newskill.json"), self.newskill.to_doc())
            doc = self.scheduler.to_doc()
            doc["lengths_table"] = list(self.cfg.lengths)
            doc["init_bias"] = {"top": self.cfg.init_bias_top,
                                "rest": self.cfg.init_bias_rest}
            write_json(os.path.join(out, "scheduler.json"), doc)
        else:
            pol = self.learner.policy
            write_json(os.path.join(out, "policy.json"), pol.to_doc())


def train(cfg: RunConfig) -> str:
    """Run one config; returns the metrics CSV path."""
    return Run(cfg).execute()


# -- skill pretraining -----------------------------------------------------------


@dataclass
class PretrainConfig:
    task: str
    variant: str | None = None
    seed: int = 1
    episodes: int = 1500
    threshold: float = 0.85          # mean per-step eval reward
    eval_period: int = 25
    eval_episodes: int = 3
    lr: float = 1e-3
    hidden: tuple = (64, 64)
    out_path: str = "skills/skill.json"


def pretrain_skill(cfg: PretrainConfig) -> dict:
    """Train one skill with the from-scratch EM learner on the dense
    pretraining variant; always writes a checkpoint, flagged subthreshold
    when the budget ran out first."""
    env, spec, _ = make_task(cfg.task, pretrain=True, variant=cfg.variant)
    seq = root_sequence(cfg.seed)
    ss_env, ss_actor, ss_learn, ss_eval, ss_init = seq.spawn(5)
    env_rng, actor_rng = make_rng(ss_env), make_rng(ss_actor)
    learn_rng, eval_rng = make_rng(ss_learn), make_rng(ss_eval)
    learner = MpoLearner(spec.obs_dim, spec.action_dim,
                         MpoConfig(lr=cfg.lr, hidden=cfg.hidden), make_rng(ss_init))
    buffer = ReplayBuffer(100_000, spec.obs_dim, spec.action_dim, (1,),
                          augment_enabled=False)
    flow = FlowController(16.0)

    def eval_mean_step_reward() -> float:
        totals = []
        for _ in range(cfg.eval_episodes):
            e_env, _, _ = make_task(cfg.task, pretrain=True, variant=cfg.variant)
            obs = e_env.reset(eval_rng)
            total, done = 0.0, False
            while not done:
                obs, r, done = e_env.step(learner.policy.mean_action(obs))
                total += r
            totals.append(total / spec.episode_len)
        return float(np.mean(totals))

    best, episodes_run = -np.inf, 0
    for ep in range(1, cfg.episodes + 1):
        episodes_run = ep
        obs = env.reset(env_rng)
        episode = []
        for _ in range(spec.episode_len):
            a = learner.policy.sample(obs, actor_rng)
            nxt, r, done = env.step(a)
            episode.append(Transition(s=obs, a=np.asarray(a, dtype=float),
                                      z=SchedulerAction(0, 1), c=1, r=r,
                                      s_next=nxt, done=done, decision_point=True))
            obs = nxt
            if done:
                break
        buffer.insert_episode(episode)
        flow.note_insert(len(episode))
        while buffer.size_lowlevel >= 500 and flow.gate():
            batch = buffer.sample_lowlevel(64, learn_rng)
            learner.critic_update(batch, learn_rng)
            learner.policy_update(batch, learn_rng)
            flow.note_samples(64)
        if ep % cfg.eval_period == 0:
            best = max(best, eval_mean_step_reward())
            if best >= cfg.threshold:
                break

    final = eval_mean_step_reward()
    best = max(best, final)
    doc = learner.policy.to_doc()
    doc["provenance"] = {
        "task": cfg.task, "variant": cfg.variant, "seed": cfg.seed,
        "episodes_run": episodes_run, "eval_mean_step_reward": best,
        "threshold": cfg.threshold, "subthreshold": bool(best < cfg.threshold),
    }
    write_json(cfg.out_path, doc)
    if doc["provenance"]["subthreshold"]:
        log.warning("pretrained %s below threshold (%.3f < %.3f)", cfg.task,
                    best, cfg.threshold)
    return doc


# -- ablation suites --------------------------------------------------------------

SUITE_NAMES = ("skill_selection", "skill_robustness", "collect_infer",
               "temporal_correlation", "fixed_k", "augmentation",
               "dense_vs_sparse", "mpo_vs_crr")


def ablation_suite(name: str, base: RunConfig, skill_dir: str,
                   seeds=(1, 2, 3, 4, 5)) -> list:
    """Expand one ablation into per-arm, per-seed RunConfigs.

    base supplies the task and default hyperparameters; skill checkpoints are
    resolved from skill_dir by manifest name.
    """
    if name not in SUITE_NAMES:
        raise ConfigurationError(f"unknown suite {name!r}")
    _, _, manifest = make_task(base.task)
    useful = [os.path.join(skill_dir, ref.name() + ".json")
              for ref in manifest["useful"]]
    distract = [os.path.join(skill_dir, ref.name() + ".json")
                for ref in manifest["distractor"]]
    arms = []
    if name == "skill_selection":
        arms = [("selection", replace(base, skills=useful + distract))]
    elif name == "skill_robustness":
        arms = [
            ("useful_only", replace(base, skills=useful)),
            ("useful_plus_distractors", replace(base, skills=useful + distract)),
            ("many_useful_plus_distractors",
             replace(base, skills=useful + useful + distract)),
            ("distractors_only", replace(base, skills=distract)),
        ]
    elif name == "collect_infer":
        arms = [
            ("new_skill", replace(base, skills=useful, include_new_skill=True)),
            ("scheduler_incl_new",
             replace(base, skills=useful, include_new_skill=True)),
            ("scheduler_excl_new",
             replace(base, skills=useful, include_new_skill=False)),
        ]
    elif name == "temporal_correlation":
        arms = [
            ("flexible_k", replace(base, skills=useful)),
            ("k_equals_1", replace(base, skills=useful, lengths=(1,),
                                   segment_len=1)),
        ]
    elif name == "fixed_k":
        arms = [(f"fixed_{k}", replace(base, skills=useful, lengths=(k,),
                                       segment_len=min(k, base.segment_len)))
                for k in (5, 10, 15, 20, 25)]
        arms.append(("flexible", replace(base, skills=useful)))
    elif name == "augmentation":
        arms = [
            ("augmentation_on", replace(base, skills=useful, augmentation=True)),
            ("augmentation_off", replace(base, skills=useful, augmentation=False)),
        ]
    elif name == "dense_vs_sparse":
        arms = [
            ("sparse", replace(base, skills=useful)),
            ("dense", replace(base, skills=useful, dense_reward=True)),
        ]
    elif name == "mpo_vs_crr":
        arms = [(f"alpha_{a}", replace(base, skills=useful, alpha=a))
                for a in (0.0, 0.5, 1.0)]
    out = []
    for arm_name, arm_cfg in arms:
        for seed in seeds:
            out.append(replace(
                arm_cfg, method="skills", seed=seed, arm=arm_name,
                out_dir=os.path.join(base.out_dir, name, arm_name, f"seed{seed}")))
    return out


def run_suite(configs, workers: int = 1) -> list:
    """Execute configs, optionally in parallel processes; returns CSV paths."""
    if workers <= 1:
        return [train(c) for c in configs]
    import concurrent.futures as cf
    with cf.ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(train, configs))


# -- reporting ---------------------------------------------------------------------


def _read_rows(path: str):
    rows = []
    with open(path) as f:
        reader = csv.DictReader(row for row in f if not row.startswith("#"))
        for row in reader:
            rows.append(row)
    return rows


def episodes_to_threshold(rows, threshold_return: float):
    for row in rows:
        v = row.get("eval_return_newskill", "")
        if v not in ("", None) and float(v) >= threshold_return:
            return int(row["episode"])
    return math.inf


def report(csv_paths, threshold_return: float | None = None) -> dict:
    """Per-arm medians/IQRs of final eval return and episodes-to-threshold.

    Arms are inferred from the grandparent directory (out/../arm/seedN)."""
    arms: dict[str, list] = {}
    for path in csv_paths:
        rows = _read_rows(path)
        if not rows:
            log.warning("skipping %s: no data rows", path)
            continue
        arm = os.path.basename(os.path.dirname(os.path.dirname(os.path.abspath(path))))
        arms.setdefault(arm, []).append((path, rows))
    out = {}
    for arm, runs in sorted(arms.items()):
        finals, reaches, execs = [], [], []
        for _, rows in runs:
            final_row = rows[-1]
            v = final_row.get("eval_return_newskill", "")
            if v in ("", None):
                continue
            finals.append(float(v))
            if threshold_return is not None:
                reaches.append(episodes_to_threshold(rows, threshold_return))
            execs.append({k: float(final_row[k]) for k in final_row
                          if k.startswith("exec_")})
        if not finals:
            continue
        finals_np = np.asarray(finals)
        entry = {
            "runs": len(finals),
            "final_return_median": float(np.median(finals_np)),
            "final_return_iqr": [float(np.percentile(finals_np, 25)),
                                 float(np.percentile(finals_np, 75))],
            "final_return_mean": float(np.mean(finals_np)),
            "final_return_sd": float(np.std(finals_np, ddof=1)) if len(finals) > 1
            else 0.0,
        }
        if threshold_return is not None:
            entry["episodes_to_threshold"] = [
                ("inf" if math.isinf(x) else x) for x in reaches]
            finite = [x for x in reaches if not math.isinf(x)]
            entry["episodes_to_threshold_median"] = (
                float(np.median(finite)) if len(finite) == len(reaches) and finite
                else "inf")
        if execs and execs[0]:
            entry["final_exec_mean"] = {
                k: float(np.mean([e[k] for e in execs if k in e]))
                for k in execs[0]}
        out[arm] = entry
    return out


def format_report(rep: dict) -> str:
    lines = [f"{'arm':<32}{'runs':>5}{'median':>12}{'iqr':>22}{'mean±sd':>22}"]
    for arm, e in rep.items():
        iqr = f"[{e['final_return_iqr'][0]:.3f}, {e['final_return_iqr'][1]:.3f}]"
        msd = f"{e['final_return_mean']:.3f}±{e['final_return_sd']:.3f}"
        lines.append(f"{arm:<32}{e['runs']:>5}{e['final_return_median']:>12.3f}"
                     f"{iqr:>22}{msd:>22}")
        if "episodes_to_threshold" in e:
            lines.append(f"    episodes_to_threshold: {e['episodes_to_threshold']}")
    return "\n".join(lines)
