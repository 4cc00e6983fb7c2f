"""Deterministic toy environments.

A 2-D point-mass arena with a gripper channel and three pushable/graspable
objects stands in for the manipulation tasks (reach / lift / hover / stack /
pyramid / triple, with y as the vertical-analog axis and stacking encoded as
a slot offset instead of gravity). A two-phase gated-reward task mirrors the
get-up-then-walk structure, and an obstacle-push task with a drag shift
covers single-skill transfer to new dynamics.

Action = (vx, vy, gripper rate), each clipped to [-V_MAX, V_MAX].
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError

V_MAX = 0.05
APERTURE_RATE = 4.0      # aperture moves up to 0.2 per step
GRASP_APERTURE = 0.2
TOL_POS = 0.05
EPS_SHAPE = 0.1
TOL_APERTURE = 0.05
SLOT_OFFSET = 0.06       # vertical-analog stacking offset
TOL_XY = 0.04
TOL_Z = 0.02
LIFT_Y = 0.7
OBJECTS = ("green", "yellow", "blue")

# two-phase task
STAND_STEPS = 3
PULSE_MIN = 0.025
STILL_MAX = 0.02
V_TARGET = 0.03
ALIVE_BONUS = 0.1

# obstacle task
WALL_Y = 0.55
WALL_X = (0.25, 0.75)
GOAL_BAND_X = (0.35, 0.65)
GOAL_BAND_Y = 0.85
PUSH_RADIUS = 0.06

TASK_IDS = ("reach_g", "reach_y", "reach_b", "open", "close", "lift_g",
            "hover_gy", "stack_gy", "pyramid", "triple", "two_phase",
            "goal_obstacle")


@dataclass
class TaskSpec:
    task_id: str
    reward_kind: str              # dense | sparse | gated_dense
    episode_len: int = 200
    tol_pos: float = TOL_POS
    eps_shape: float = EPS_SHAPE
    action_dim: int = 3
    obs_dim: int = 0              # filled by make_task
    pretrain: bool = False
    variant: str | None = None


@dataclass
class SkillRef:
    """Pretraining pointer used in task manifests."""

    task_id: str
    seed: int = 1
    variant: str | None = None

    def name(self) -> str:
        base = self.task_id if self.variant is None else f"{self.task_id}_{self.variant}"
        return base if self.seed == 1 else f"{base}_s{self.seed}"


# -- reward algebra ----------------------------------------------------------

def shaped_closeness(scaled_dist: float, eps_shape: float) -> float:
    """1 inside the unit tolerance ball, 1 - tanh^2 shaping outside."""
    if scaled_dist <= 1.0:
        return 1.0
    return 1.0 - math.tanh(scaled_dist * eps_shape) ** 2


def reward_dense_reach(agent: np.ndarray, target: np.ndarray, tol: float,
                       eps_shape: float) -> float:
    return shaped_closeness(float(np.linalg.norm((agent - target) / tol)), eps_shape)


def reach_sparse(agent: np.ndarray, target: np.ndarray, tol: float) -> float:
    return 1.0 if float(np.linalg.norm((agent - target) / tol)) <= 1.0 else 0.0


def stacked(top: np.ndarray, bottom: np.ndarray) -> bool:
    dx = abs(top[0] - bottom[0])
    dz = top[1] - bottom[1]
    return dx <= TOL_XY and abs(dz - SLOT_OFFSET) <= TOL_Z


def reward_sparse_stack(state: "ArenaState", top: str, bottom: str) -> float:
    """1 iff top sits in the bottom's slot, is not held, and the gripper has
    left the top object (the leave factor)."""
    p_top = state.obj(top)
    if not stacked(p_top, state.obj(bottom)):
        return 0.0
    if state.held == OBJECTS.index(top):
        return 0.0
    return 1.0 * (1.0 - reach_sparse(state.agent, p_top, TOL_POS))


def reward_sparse_pyramid(state: "ArenaState") -> float:
    base_mid = 0.5 * (state.obj("yellow") + state.obj("blue"))
    near_base = abs(state.obj("yellow")[0] - state.obj("blue")[0]) <= 2.5 * TOL_XY
    top = state.obj("green")
    ok = (near_base and abs(top[0] - base_mid[0]) <= TOL_XY
          and abs((top[1] - base_mid[1]) - SLOT_OFFSET) <= TOL_Z
          and state.held != OBJECTS.index("green"))
    return 1.0 * ok * (1.0 - reach_sparse(state.agent, top, TOL_POS))


def reward_sparse_triple(state: "ArenaState") -> float:
    ok = (stacked(state.obj("green"), state.obj("yellow"))
          and stacked(state.obj("yellow"), state.obj("blue"))
          and state.held != OBJECTS.index("green"))
    return 1.0 * ok * (1.0 - reach_sparse(state.agent, state.obj("green"), TOL_POS))


def reward_gated_walk(down: bool, speed: float, v_target: float) -> float:
    """0 while down; else velocity tracking plus an alive bonus."""
    if down:
        return 0.0
    return 1.0 - abs(speed - v_target) / V_MAX + ALIVE_BONUS


# -- state -------------------------------------------------------------------

@dataclass
class ArenaState:
    agent: np.ndarray
    aperture: float
    objects: np.ndarray            # (3, 2)
    held: int = -1                 # object index or -1
    step: int = 0
    down: bool = False             # two-phase flag
    stand_count: int = 0
    last_speed: float = 0.0

    def obj(self, name: str) -> np.ndarray:
        return self.objects[OBJECTS.index(name)]


class PointArenaEnv:
    """Single-task environment; reward and observation depend on TaskSpec."""

    def __init__(self, spec: TaskSpec, drag: float = 1.0):
        self.spec = spec
        self.drag = drag
        self.state: ArenaState | None = None
        self._family = ("locomotion" if spec.task_id == "two_phase"
                        else "push" if spec.task_id == "goal_obstacle"
                        else "manipulation")

    # -- lifecycle --------------------------------------------------------

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        jit = lambda: rng.uniform(-0.03, 0.03, size=2)
        objects = np.array([
            [0.35, 0.25], [0.65, 0.25], [0.50, 0.12],
        ]) + np.array([jit(), jit(), jit()])
        agent = np.array([0.5, 0.8]) + jit()
        aperture = float(np.clip(0.6 + rng.uniform(-0.1, 0.1), 0.0, 1.0))
        down = self._family == "locomotion"
        if self._family == "locomotion" and self.spec.variant == "walk":
            down = False  # the walking skill pretrains from standing
        if self._family == "push":
            agent = np.array([0.5, 0.15]) + jit()
            objects[2] = np.array([0.5, 0.30]) + jit()
        self.state = ArenaState(agent=agent, aperture=aperture, objects=objects,
                                held=-1, step=0, down=down, stand_count=0)
        return self.observe()

    # -- dynamics ----------------------------------------------------------

    def step(self, action: np.ndarray):
        if self.state is None:
            raise ConfigurationError("step before reset")
        st = self.state
        a = np.asarray(action, dtype=float)
        v = np.clip(a[:2], -V_MAX, V_MAX)
        dg = float(np.clip(a[2], -V_MAX, V_MAX))

        new_agent = np.clip(st.agent + v, 0.0, 1.0)
        if self._family == "push":
            new_agent = self._block_wall(st.agent, new_agent)
            self._push_ball(new_agent)
        st.agent = new_agent
        if st.held >= 0:
            st.objects[st.held] = st.agent.copy()
        st.aperture = float(np.clip(st.aperture + APERTURE_RATE * dg, 0.0, 1.0))

        if st.held >= 0 and st.aperture >= GRASP_APERTURE:
            st.held = -1
        elif st.held < 0 and st.aperture < GRASP_APERTURE and \
                self._family == "manipulation":
            dists = np.linalg.norm(st.objects - st.agent, axis=1)
            nearest = int(np.argmin(dists))
            if dists[nearest] <= TOL_POS:
                st.held = nearest

        st.last_speed = float(np.linalg.norm(v))
        if self._family == "locomotion" and st.down:
            still = np.max(np.abs(v)) <= STILL_MAX
            pulse = abs(dg) >= PULSE_MIN
            st.stand_count = st.stand_count + 1 if (still and pulse) else 0
            if st.stand_count >= STAND_STEPS:
                st.down = False

        st.step += 1
        reward = self._reward(v, dg)
        done = st.step >= self.spec.episode_len
        return self.observe(), reward, done

    def _block_wall(self, old: np.ndarray, new: np.ndarray) -> np.ndarray:
        crosses = (old[1] - WALL_Y) * (new[1] - WALL_Y) < 0.0
        if crosses:
            t = (WALL_Y - old[1]) / (new[1] - old[1])
            x_cross = old[0] + t * (new[0] - old[0])
            if WALL_X[0] <= x_cross <= WALL_X[1]:
                side = 1e-3 if old[1] > WALL_Y else -1e-3
                return np.array([new[0], WALL_Y + side])
        return new

    def _push_ball(self, agent_new: np.ndarray) -> None:
        st = self.state
        ball = st.objects[2]
        delta = ball - agent_new
        dist = float(np.linalg.norm(delta))
        if dist < PUSH_RADIUS:
            direction = delta / dist if dist > 1e-9 else np.array([0.0, 1.0])
            moved = ball + direction * (PUSH_RADIUS - dist) / self.drag
            moved = np.clip(moved, 0.0, 1.0)
            st.objects[2] = self._block_wall(ball, moved)

    # -- rewards -----------------------------------------------------------

    def _reward(self, v: np.ndarray, dg: float) -> float:
        st = self.state
        tid, spec = self.spec.task_id, self.spec
        tol, eps = spec.tol_pos, spec.eps_shape
        if tid.startswith("reach_"):
            target = {"reach_g": "green", "reach_y": "yellow", "reach_b": "blue"}[tid]
            return reward_dense_reach(st.agent, st.obj(target), tol, eps)
        if tid in ("open", "close"):
            want = 1.0 if tid == "open" else 0.0
            return shaped_closeness(abs(st.aperture - want) / TOL_APERTURE, eps)
        if tid == "lift_g":
            if spec.pretrain or spec.reward_kind == "dense":
                return self._lift_dense()
            return 1.0 if st.obj("green")[1] >= LIFT_Y else 0.0
        if tid == "hover_gy":
            return self._hover_dense()
        if tid == "stack_gy":
            if spec.pretrain or spec.reward_kind == "dense":
                return 0.5 * self._hover_dense() + 0.5 * reward_sparse_stack(
                    st, "green", "yellow")
            return reward_sparse_stack(st, "green", "yellow")
        if tid == "pyramid":
            return reward_sparse_pyramid(st)
        if tid == "triple":
            return reward_sparse_triple(st)
        if tid == "two_phase":
            if spec.variant == "stand":
                progress = 0.0 if not st.down else st.stand_count / STAND_STEPS
                return 1.0 if not st.down else progress
            return reward_gated_walk(st.down, st.last_speed, V_TARGET)
        if tid == "goal_obstacle":
            ball = st.objects[2]
            in_goal = (GOAL_BAND_X[0] <= ball[0] <= GOAL_BAND_X[1]
                       and ball[1] >= GOAL_BAND_Y)
            if spec.pretrain or spec.reward_kind == "dense":
                goal_center = np.array([0.5, 0.925])
                return (0.4 * shaped_closeness(
                            float(np.linalg.norm((ball - st.agent) / (2 * tol))), eps)
                        + 0.6 * shaped_closeness(
                            float(np.linalg.norm((goal_center - ball) / (2 * tol))), eps))
            return 1.0 if in_goal else 0.0
        raise ConfigurationError(f"no reward for task {tid!r}")

    def _lift_dense(self) -> float:
        st = self.state
        held = 1.0 if st.held == OBJECTS.index("green") else 0.0
        reach = reward_dense_reach(st.agent, st.obj("green"), self.spec.tol_pos,
                                   self.spec.eps_shape)
        progress = float(np.clip((st.obj("green")[1] - 0.2) / (LIFT_Y - 0.2), 0, 1))
        return 0.3 * reach + 0.2 * held + 0.5 * held * progress

    def _hover_dense(self) -> float:
        st = self.state
        held = 1.0 if st.held == OBJECTS.index("green") else 0.0
        reach = reward_dense_reach(st.agent, st.obj("green"), self.spec.tol_pos,
                                   self.spec.eps_shape)
        slot = st.obj("yellow") + np.array([0.0, SLOT_OFFSET])
        delta = st.obj("green") - slot
        scaled = math.hypot(delta[0] / TOL_XY, delta[1] / TOL_Z)
        closeness = shaped_closeness(scaled, self.spec.eps_shape)
        return 0.3 * reach + 0.2 * held + 0.5 * held * closeness

    # -- observations --------------------------------------------------------

    def observe(self) -> np.ndarray:
        st = self.state
        t_frac = st.step / self.spec.episode_len
        if self._family == "manipulation":
            parts = [st.agent, [st.aperture]]
            for j in range(3):
                parts.extend([st.objects[j], [1.0 if st.held == j else 0.0],
                              st.objects[j] - st.agent])
            parts.append([t_frac])
            return np.concatenate([np.asarray(p, dtype=float) for p in parts])
        if self._family == "locomotion":
            return np.array([st.agent[0], st.agent[1], st.aperture,
                             1.0 if st.down else 0.0,
                             st.stand_count / STAND_STEPS,
                             V_TARGET / V_MAX, st.last_speed / V_MAX, t_frac])
        ball = st.objects[2]
        return np.array([st.agent[0], st.agent[1], st.aperture,
                         ball[0], ball[1], ball[0] - st.agent[0],
                         ball[1] - st.agent[1], t_frac])


def wrap_counter(obs: np.ndarray, c: int, k_max: int) -> np.ndarray:
    """Counter channel for the scheduler view."""
    if c < 1:
        raise ConfigurationError("counter must be >= 1")
    return np.concatenate([obs, [c / k_max]])


# -- task registry -------------------------------------------------------------

_KINDS = {
    "reach_g": "dense", "reach_y": "dense", "reach_b": "dense",
    "open": "dense", "close": "dense",
    "lift_g": "sparse", "hover_gy": "dense", "stack_gy": "sparse",
    "pyramid": "sparse", "triple": "sparse",
    "two_phase": "gated_dense", "goal_obstacle": "sparse",
}

_MANIFESTS = {
    "lift_g": (["reach_g", "close"],
               [("reach_y", 1), ("reach_b", 1), ("open", 1), ("open", 2)]),
    "stack_gy": (["reach_g", "close", "lift_g", "hover_gy"],
                 [("reach_y", 1), ("reach_b", 1), ("open", 1),
                  ("reach_y", 2), ("reach_b", 2), ("open", 2)]),
    "pyramid": (["reach_g", "close", "lift_g", "hover_gy", "stack_gy",
                 "reach_y", "reach_b", ("lift_g", 2), ("hover_gy", 2)],
                [("open", 1), ("open", 2), ("open", 3)]),
    "triple": (["reach_g", "close", "lift_g", "hover_gy", "stack_gy",
                "reach_y", ("lift_g", 2), ("hover_gy", 2), ("stack_gy", 2)],
               [("open", 1), ("reach_b", 1), ("open", 2), ("reach_b", 2)]),
}


def _refs(entries):
    out = []
    for e in entries:
        if isinstance(e, str):
            out.append(SkillRef(e))
        elif isinstance(e, SkillRef):
            out.append(e)
        else:
            out.append(SkillRef(e[0], seed=e[1]))
    return out


def task_manifest(task_id: str) -> dict:
    if task_id == "two_phase":
        return {"useful": [SkillRef("two_phase", variant="stand"),
                           SkillRef("two_phase", variant="walk")],
                "distractor": [SkillRef("open"), SkillRef("close", seed=2)]}
    if task_id == "goal_obstacle":
        return {"useful": [SkillRef("goal_obstacle", variant="base_dynamics")],
                "distractor": []}
    useful, distractor = _MANIFESTS.get(task_id, ([], []))
    return {"useful": _refs(useful), "distractor": _refs(distractor)}


def make_task(task_id: str, pretrain: bool = False, variant: str | None = None):
    """(env, TaskSpec, manifest) for a registered task id.

    pretrain=True selects the dense staged reward variant used to train
    skills; variant picks a sub-behavior where the task has phases
    (two_phase: stand | walk) or a dynamics setting (goal_obstacle:
    base_dynamics).
    """
    if task_id not in TASK_IDS:
        raise ConfigurationError(f"unknown task id {task_id!r}")
    kind = _KINDS[task_id]
    spec = TaskSpec(task_id=task_id, reward_kind=kind, pretrain=pretrain,
                    variant=variant)
    drag = 1.0
    if task_id == "goal_obstacle":
        drag = 1.0 if (pretrain or variant == "base_dynamics") else 2.0
    env = PointArenaEnv(spec, drag=drag)
    spec.obs_dim = {"manipulation": 19, "locomotion": 8, "push": 8}[env._family]
    return env, spec, task_manifest(task_id)
