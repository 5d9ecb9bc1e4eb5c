"""Two-level execution: meta decisions at 2 Hz, subtask control at 60 Hz,
physics at 240 Hz (one meta interval = 30 control steps = 120 substeps).

SubtaskEnv wraps the simulator as a gym-style environment for imitation
training of one controller; MetaEnv exposes 2 Hz decisions over frozen
subtask controllers for meta training and evaluation. Subtask controllers
always run on their mean action inside meta episodes; exploration noise
lives only in the controller currently being trained.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import rewards as rw
from .features import proprio_50, sit_meta_state, walk_state
from .geometry import angle_diff, wrap_angle
from .refmotion import ReferenceClip, nearest_frame_index, reference_state_init, sample_frame
from .simenv import (
    ChairModel,
    FELL,
    HumanoidState,
    NUM_JOINTS,
    HIP_PITCH,
    KNEE,
    RUNNING,
    SimConfig,
    YAW_DIVERGE_LIMIT,
    check_termination,
    control_step,
    foot_contacts,
    pelvis_seat_contact,
    reset_from_frame,
    reset_from_pose_pool,
    spawn,
)

SUBTASKS = ("walk", "left_turn", "right_turn", "sit")
CONTROL_DT = 1.0 / 60.0
STEPS_PER_META = 30          # 2 Hz meta over 60 Hz control
SUBSTEPS = 4                 # 240 Hz physics under 60 Hz control
SUCCESS_HOLD = 3.0           # seconds of continuous seat contact
SUCCESS_STEPS = int(round(SUCCESS_HOLD / CONTROL_DT))

WALK_TARGET_RADIUS = (2.0, 4.0)
WALK_TARGET_CONE = math.pi / 3       # half-angle of the forward cone
WALK_TARGET_PERIOD = 2.5             # seconds between resamples
WALK_TARGET_REACHED = 0.3            # meters
META_TARGET_CLAMP = 5.0              # meters


def obs_dim_for(label: str) -> int:
    return {"walk": 52, "left_turn": 50, "right_turn": 50, "sit": 57}[label]


def subtask_obs(label: str, state, chair: ChairModel, walk_target=None) -> np.ndarray:
    if label == "walk":
        return walk_state(state, walk_target)
    if label == "sit":
        return sit_meta_state(state, chair)
    return proprio_50(state)


def seat_distance_3d(state, chair: ChairModel) -> float:
    seat = chair.seat_center
    return math.sqrt((state.root_x - seat[0]) ** 2
                     + (state.root_y - seat[1]) ** 2
                     + (state.root_z - seat[2]) ** 2)


def chair_behind_pose(x: float, y: float, yaw: float, offset: float) -> ChairModel:
    """Chair placed `offset` meters straight behind a pose, facing the same
    way, so that sitting down drifts the pelvis onto the seat."""
    return ChairModel(x=x - offset * math.cos(yaw),
                      y=y - offset * math.sin(yaw), yaw=yaw)


SEATED_HIP, SEATED_KNEE = 1.5, -2.1


def seated_pose_q() -> np.ndarray:
    """A deep-squat pose whose FK height sits below the seat top."""
    q = np.zeros(NUM_JOINTS)
    for hp in HIP_PITCH:
        q[hp] = SEATED_HIP
    for kn in KNEE:
        q[kn] = SEATED_KNEE
    return q


def seated_state(chair: ChairModel, cfg: SimConfig) -> HumanoidState:
    """Humanoid resting on the seat center, aligned with the chair."""
    q = seated_pose_q()
    st = HumanoidState(q=q, qdot=np.zeros(NUM_JOINTS), root_x=chair.x,
                       root_y=chair.y, root_z=chair.seat_top_z,
                       root_yaw=chair.yaw, seat_support=True, over_seat=True)
    st.foot_contact = foot_contacts(q, st.root_z, cfg)
    return st


class _UnwrappedYaw:
    """Reference yaw as a continuous function of phase, safe across loop
    wraps, re-anchored to the humanoid's starting yaw."""

    def __init__(self, clip: ReferenceClip):
        self.clip = clip
        self.yaw = np.unwrap(clip.root_rpy[:, 1])
        n = len(clip)
        if clip.loopable and n > 1:
            per = (self.yaw[-1] - self.yaw[0]) / (n - 1)
            self.cycle_advance = self.yaw[-1] - self.yaw[0] + per
        else:
            self.cycle_advance = 0.0
        self.offset = 0.0

    def anchor(self, phase: float, state_yaw: float):
        self.offset = state_yaw - self._raw(phase)

    def _raw(self, phase: float) -> float:
        d = self.clip.duration
        if self.clip.loopable:
            cycles, local = divmod(phase, d)
            pos = min(local * self.clip.fps, len(self.clip) - 1e-9)
            i0 = int(pos)
            i1 = min(i0 + 1, len(self.clip) - 1)
            a = pos - i0
            base = (1 - a) * self.yaw[i0] + a * self.yaw[i1]
            return base + cycles * self.cycle_advance
        pos = min(phase * self.clip.fps, len(self.clip) - 1)
        i0 = int(pos)
        i1 = min(i0 + 1, len(self.clip) - 1)
        a = pos - i0
        return (1 - a) * self.yaw[i0] + a * self.yaw[i1]

    def at(self, phase: float) -> float:
        return self._raw(phase) + self.offset


@dataclass
class SubtaskEnvConfig:
    stage: str = "stage1"            # walk: stage1 (velocity) or stage2 (target)
    init: str = "first_frame"        # first_frame | rsi | pool
    horizon: float = 10.0            # cap for loopable clips, s
    sit_settle: float = 1.0          # extra seconds after the sit clip ends
    sit_chair_offset: float = 0.33   # seat center this far behind the start
    weights: rw.RewardWeights = field(default_factory=rw.RewardWeights)


class SubtaskEnv:
    """Imitation episode for a single subtask controller."""

    def __init__(self, label: str, clip: ReferenceClip, sim: SimConfig,
                 rng: np.random.Generator, cfg: SubtaskEnvConfig | None = None,
                 pool=None):
        if label not in SUBTASKS:
            raise ValueError(f"unknown subtask {label!r}")
        self.label = label
        self.clip = clip
        self.sim = sim
        self.rng = rng
        self.cfg = cfg or SubtaskEnvConfig()
        self.pool = pool
        self.obs_dim = obs_dim_for(label)
        self.is_turn = label in ("left_turn", "right_turn")
        self.yaw_ref = _UnwrappedYaw(clip) if self.is_turn else None
        if clip.loopable:
            self.horizon = self.cfg.horizon
        else:
            self.horizon = clip.duration + (self.cfg.sit_settle if label == "sit" else 0.0)
        self.state = None
        self.chair = ChairModel(x=50.0, y=50.0)  # parked far away unless sitting
        self.phase0 = 0.0
        self.t = 0
        self.target = None
        self.target_age = 0
        self.human_yaw_acc = 0.0
        self.prev_yaw = 0.0

    # episode lifecycle -----------------------------------------------------

    def _initial_state(self):
        if self.cfg.init == "first_frame":
            self.phase0 = 0.0
            return reset_from_frame(self.clip.frame(0), self.sim)
        if self.cfg.init == "rsi":
            idx, frame = reference_state_init(self.clip, self.rng)
            self.phase0 = idx / self.clip.fps
            return reset_from_frame(frame, self.sim)
        if self.cfg.init == "pool":
            st = reset_from_pose_pool(self.pool, self.rng)
            self.phase0 = nearest_frame_index(self.clip, st.q) / self.clip.fps
            return st
        raise ValueError(f"unknown init rule {self.cfg.init!r}")

    def _place_chair(self, state):
        if self.label != "sit":
            self.chair = ChairModel(x=50.0 + state.root_x, y=50.0 + state.root_y)
            return
        if self.cfg.init == "pool":
            # behind wherever the previous subtask ended
            self.chair = chair_behind_pose(state.root_x, state.root_y,
                                           state.root_yaw, self.cfg.sit_chair_offset)
        else:
            # behind the clip's first frame, also covering RSI mid-clip starts
            x0, y0 = self.clip.root_pos[0, 0], self.clip.root_pos[0, 1]
            yaw0 = float(self.clip.root_rpy[0, 1])
            self.chair = chair_behind_pose(x0, y0, yaw0, self.cfg.sit_chair_offset)

    def _new_walk_target(self):
        r = self.rng.uniform(*WALK_TARGET_RADIUS)
        ang = self.state.root_yaw + self.rng.uniform(-WALK_TARGET_CONE, WALK_TARGET_CONE)
        self.target = np.array([self.state.root_x + r * math.cos(ang),
                                self.state.root_y + r * math.sin(ang)])
        self.target_age = 0

    def reset(self) -> np.ndarray:
        self.state = self._initial_state()
        self._place_chair(self.state)
        self.t = 0
        if self.label == "walk":
            self._new_walk_target()
        if self.is_turn:
            self.yaw_ref.anchor(self.phase0, self.state.root_yaw)
            self.human_yaw_acc = self.state.root_yaw
            self.prev_yaw = self.state.root_yaw
        return self._obs()

    def _obs(self):
        return subtask_obs(self.label, self.state, self.chair, self.target)

    def _phase(self):
        return self.phase0 + self.t * CONTROL_DT

    # stepping ---------------------------------------------------------------

    def _goal_reward(self, prev_dist):
        st = self.state
        if self.label == "walk":
            if self.cfg.stage == "stage1":
                ref = sample_frame(self.clip, self._phase())
                c, s = math.cos(st.root_yaw), math.sin(st.root_yaw)
                v_local = np.array([c * st.root_vel[0] + s * st.root_vel[1],
                                    -s * st.root_vel[0] + c * st.root_vel[1],
                                    st.root_vel[2]])
                return rw.walk_goal_stage1(v_local, ref.root_vel_hat)
            d_next = math.hypot(self.target[0] - st.root_x, self.target[1] - st.root_y)
            return rw.walk_goal_stage2(d_next, prev_dist, CONTROL_DT)
        if self.is_turn:
            ref = sample_frame(self.clip, self._phase())
            ref_yaw = self.yaw_ref.at(self._phase())
            d = np.array([angle_diff(st.root_pitch, ref.root_rpy_hat[0]),
                          self.human_yaw_acc - ref_yaw,
                          angle_diff(st.root_roll, ref.root_rpy_hat[2])])
            return 0.1 * math.exp(-10.0 * float(np.dot(d, d)))
        d_next = seat_distance_3d(st, self.chair)
        return rw.sit_goal(d_next, prev_dist, CONTROL_DT)

    def step(self, action):
        st = self.state
        if self.label == "walk" and self.cfg.stage == "stage2":
            prev_dist = math.hypot(self.target[0] - st.root_x, self.target[1] - st.root_y)
        elif self.label == "sit":
            prev_dist = seat_distance_3d(st, self.chair)
        else:
            prev_dist = 0.0

        self.state = control_step(st, action, self.chair, self.sim, SUBSTEPS)
        self.t += 1
        st = self.state
        if self.is_turn:
            self.human_yaw_acc += angle_diff(st.root_yaw, self.prev_yaw)
            self.prev_yaw = st.root_yaw

        ref = sample_frame(self.clip, self._phase())
        reward = rw.subtask_reward(rw.similarity_reward(st, ref, self.cfg.weights),
                                   self._goal_reward(prev_dist))

        term = self._termination(ref)
        elapsed = self.t * CONTROL_DT
        timeout = self.phase0 + elapsed >= self.horizon
        done = term != RUNNING or timeout
        success = bool(done and term == RUNNING and self._success())
        info = {"termination": term, "success": success,
                "state": st} if done else {}

        if self.label == "walk" and self.cfg.stage == "stage2":
            self.target_age += 1
            d = math.hypot(self.target[0] - st.root_x, self.target[1] - st.root_y)
            if d < WALK_TARGET_REACHED or self.target_age >= int(WALK_TARGET_PERIOD / CONTROL_DT):
                self._new_walk_target()
        return self._obs(), reward, done, info

    def _termination(self, ref):
        if self.is_turn:
            ref_yaw = self.yaw_ref.at(self._phase())
            if abs(self.human_yaw_acc - ref_yaw) > YAW_DIVERGE_LIMIT:
                return "yaw_diverged"
            return check_termination(self.state, self.label, None)
        return check_termination(self.state, self.label, ref)

    def _success(self):
        if self.label == "sit":
            return pelvis_seat_contact(self.state, self.chair)
        return True  # walk/turn: surviving to the horizon is the success


@dataclass
class MetaStep:
    subtask: str
    reward_sum: float
    distance: float


@dataclass
class EpisodeLog:
    steps: list = field(default_factory=list)
    outcome: str = "timeout"
    min_dist: float = math.inf
    duration: float = 0.0
    control_steps: int = 0
    physics_steps: int = 0

    @property
    def success(self) -> bool:
        return self.outcome == "success"


class MetaEnv:
    """One 2 Hz decision per step() over frozen subtask controllers.

    The action vector is [class, tx, ty]: a repertoire index plus the walk
    target offset in the humanoid frame (used only when walk is picked,
    clamped to 5 m, resolved to world coordinates at the interval start and
    held fixed for the interval).
    """

    def __init__(self, subtask_policies: dict, sim: SimConfig,
                 rng: np.random.Generator, chair: ChairModel | None = None,
                 zone: int = 1, repertoire=SUBTASKS, max_time: float = 20.0,
                 spawn_fn=None):
        missing = [l for l in repertoire if l not in subtask_policies]
        if missing:
            raise ValueError(f"missing subtask controllers: {missing}")
        self.policies = subtask_policies
        self.sim = sim
        self.rng = rng
        self.chair = chair or ChairModel()
        self.zone = zone
        self.repertoire = tuple(repertoire)
        self.max_time = max_time
        self.spawn_fn = spawn_fn
        self.obs_dim = 57
        self.state = None
        self.contact_streak = 0
        self.log = None
        self.last_walk_target = None

    def reset(self) -> np.ndarray:
        if self.spawn_fn is not None:
            self.state = self.spawn_fn(self.chair, self.rng, self.sim)
        else:
            self.state = spawn(self.zone, self.chair, self.rng, self.sim)
        self.contact_streak = 0
        self.log = EpisodeLog()
        self.log.min_dist = seat_distance_3d(self.state, self.chair)
        return sit_meta_state(self.state, self.chair)

    def step(self, action):
        k = int(action[0])
        label = self.repertoire[k]
        policy = self.policies[label]
        st = self.state

        walk_target = None
        if label == "walk":
            off = np.asarray(action[1:3], dtype=float)
            n = float(np.hypot(off[0], off[1]))
            if n > META_TARGET_CLAMP:
                off = off * (META_TARGET_CLAMP / n)
            c, s = math.cos(st.root_yaw), math.sin(st.root_yaw)
            walk_target = np.array([st.root_x + c * off[0] - s * off[1],
                                    st.root_y + s * off[0] + c * off[1]])
            self.last_walk_target = walk_target

        reward_sum = 0.0
        outcome = None
        dist_at_decision = seat_distance_3d(st, self.chair)
        prev_dist = dist_at_decision
        for _ in range(STEPS_PER_META):
            obs = subtask_obs(label, st, self.chair, walk_target)
            a = policy.deterministic_action(obs).action
            st = control_step(st, a, self.chair, self.sim, SUBSTEPS)
            self.log.control_steps += 1
            self.log.physics_steps += SUBSTEPS
            d = seat_distance_3d(st, self.chair)
            contact = pelvis_seat_contact(st, self.chair)
            reward_sum += rw.meta_reward(contact, d, prev_dist, CONTROL_DT)
            prev_dist = d
            if d < self.log.min_dist:
                self.log.min_dist = d
            self.contact_streak = self.contact_streak + 1 if contact else 0
            if self.contact_streak >= SUCCESS_STEPS:
                outcome = "success"
                break
            if check_termination(st, "meta") == FELL:
                outcome = "fall"
                break
            if st.sim_time >= self.max_time:
                outcome = "timeout"
                break
        self.state = st
        self.log.steps.append(MetaStep(label, reward_sum, dist_at_decision))
        self.log.duration = st.sim_time
        done = outcome is not None
        if done:
            self.log.outcome = outcome
        return sit_meta_state(st, self.chair), reward_sum, done, (
            {"outcome": outcome, "success": outcome == "success",
             "log": self.log} if done else {})


class ScriptedMetaActor:
    """Always issues one fixed MetaAction; handy as an evaluation oracle."""

    def __init__(self, label: str, target=(0.0, 0.0)):
        self.label = label
        self.target = np.asarray(target, dtype=float)

    def begin_episode(self):
        pass

    def act(self, env: MetaEnv, obs, rng, deterministic=True):
        k = env.repertoire.index(self.label)
        return np.array([k, self.target[0], self.target[1]])


class TrainedMetaActor:
    """Wraps a mixed-head policy network as a meta actor."""

    def __init__(self, net):
        self.net = net

    def begin_episode(self):
        pass

    def act(self, env: MetaEnv, obs, rng, deterministic=True):
        if deterministic or rng is None:
            return self.net.deterministic_action(obs).action
        return self.net.sample(obs, rng).action


class FixedOrderMetaEnv:
    """Meta environment whose action is a single stay/advance bit over a
    pre-defined subtask order; completed subtasks are never revisited and the
    walk target is pinned to the seat center."""

    def __init__(self, inner: MetaEnv, order):
        for label in order:
            if label not in inner.repertoire:
                raise ValueError(f"{label} missing from repertoire")
        self.inner = inner
        self.order = tuple(order)
        self.stage = 0
        self.obs_dim = inner.obs_dim

    def reset(self):
        self.stage = 0
        return self.inner.reset()

    def step(self, action):
        advance = int(action[0]) == 1
        if advance and self.stage < len(self.order) - 1:
            self.stage += 1
        label = self.order[self.stage]
        k = self.inner.repertoire.index(label)
        st = self.inner.state
        seat = self.inner.chair.seat_center
        c, s = math.cos(st.root_yaw), math.sin(st.root_yaw)
        dx, dy = seat[0] - st.root_x, seat[1] - st.root_y
        target_local = (c * dx + s * dy, -s * dx + c * dy)
        return self.inner.step(np.array([k, target_local[0], target_local[1]]))


def run_meta_episode(actor, env: MetaEnv, rng=None,
                     deterministic: bool = True) -> EpisodeLog:
    """Run one meta episode to completion and return its log."""
    obs = env.reset()
    actor.begin_episode()
    done = False
    info = {}
    while not done:
        action = actor.act(env, obs, rng, deterministic)
        obs, _, done, info = env.step(action)
    return info["log"]


def run_subtask_episode(policy, env: SubtaskEnv, rng=None,
                        deterministic: bool = True) -> dict:
    """Run one subtask episode; returns rewards, termination and success."""
    obs = env.reset()
    done = False
    rewards = []
    info = {}
    while not done:
        if deterministic or rng is None:
            action = policy.deterministic_action(obs).action
        else:
            action = policy.sample(obs, rng).action
        obs, r, done, info = env.step(action)
        rewards.append(r)
    return {
        "rewards": np.asarray(rewards),
        "termination": info["termination"],
        "success": info["success"],
        "final_state": info["state"],
    }
