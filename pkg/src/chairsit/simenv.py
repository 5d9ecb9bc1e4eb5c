"""Reduced-order humanoid + chair physics stepped at 240 Hz.

The humanoid is 21 joints under decoupled PD control plus an analytic root:
pelvis height comes from leg forward kinematics, horizontal motion from
stance-leg hip rates, yaw from stance-leg hip-yaw rates, and pitch/roll from
a spring-damper pulled toward the abdomen angles. The chair is two slabs
(seat, backrest) colliding with a vertical root capsule via projection.

Everything here is deterministic: identical (state, actions, config) give
bit-identical trajectories.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import Pose2D, angle_diff, wrap_angle

NUM_JOINTS = 21

# joint index layout: abdomen 3, per leg hip 3 + knee + ankle 2, per arm
# shoulder 2 + elbow
ABD_PITCH, ABD_ROLL, ABD_YAW = 0, 1, 2
L_HIP_PITCH, L_HIP_ROLL, L_HIP_YAW, L_KNEE, L_ANKLE_PITCH, L_ANKLE_ROLL = 3, 4, 5, 6, 7, 8
R_HIP_PITCH, R_HIP_ROLL, R_HIP_YAW, R_KNEE, R_ANKLE_PITCH, R_ANKLE_ROLL = 9, 10, 11, 12, 13, 14
L_SHOULDER_PITCH, L_SHOULDER_ROLL, L_ELBOW = 15, 16, 17
R_SHOULDER_PITCH, R_SHOULDER_ROLL, R_ELBOW = 18, 19, 20

JOINT_NAMES = [
    "abdomen_pitch", "abdomen_roll", "abdomen_yaw",
    "l_hip_pitch", "l_hip_roll", "l_hip_yaw", "l_knee", "l_ankle_pitch", "l_ankle_roll",
    "r_hip_pitch", "r_hip_roll", "r_hip_yaw", "r_knee", "r_ankle_pitch", "r_ankle_roll",
    "l_shoulder_pitch", "l_shoulder_roll", "l_elbow",
    "r_shoulder_pitch", "r_shoulder_roll", "r_elbow",
]

HIP_PITCH = (L_HIP_PITCH, R_HIP_PITCH)
HIP_ROLL = (L_HIP_ROLL, R_HIP_ROLL)
HIP_YAW = (L_HIP_YAW, R_HIP_YAW)
KNEE = (L_KNEE, R_KNEE)


def default_joint_limits() -> np.ndarray:
    lim = np.zeros((NUM_JOINTS, 2))
    lim[ABD_PITCH] = (-0.7, 0.7)
    lim[ABD_ROLL] = (-0.7, 0.7)
    lim[ABD_YAW] = (-0.7, 0.7)
    for hp, hr, hy, kn, ap, ar in (
        (L_HIP_PITCH, L_HIP_ROLL, L_HIP_YAW, L_KNEE, L_ANKLE_PITCH, L_ANKLE_ROLL),
        (R_HIP_PITCH, R_HIP_ROLL, R_HIP_YAW, R_KNEE, R_ANKLE_PITCH, R_ANKLE_ROLL),
    ):
        lim[hp] = (-0.9, 2.4)
        lim[hr] = (-0.6, 0.6)
        lim[hy] = (-1.0, 1.0)
        lim[kn] = (-2.4, 0.0)   # flexion only
        lim[ap] = (-0.8, 0.8)
        lim[ar] = (-0.5, 0.5)
    for sp, sr, el in (
        (L_SHOULDER_PITCH, L_SHOULDER_ROLL, L_ELBOW),
        (R_SHOULDER_PITCH, R_SHOULDER_ROLL, R_ELBOW),
    ):
        lim[sp] = (-1.5, 1.5)
        lim[sr] = (-1.2, 1.2)
        lim[el] = (-2.2, 0.2)
    return lim


class SimulationDiverged(RuntimeError):
    """Raised when a step produces a non-finite state."""

    def __init__(self, sim_time: float):
        super().__init__(f"simulation diverged at t={sim_time:.4f}s")
        self.sim_time = sim_time


@dataclass
class SimConfig:
    dt: float = 1.0 / 240.0
    kp: float = 40.0
    kd: float = 4.0
    thigh_len: float = 0.42
    shin_len: float = 0.41
    foot_clearance: float = 0.08
    k_prop: float = 0.9
    k_turn: float = 0.8
    balance_spring: float = 60.0    # ks
    balance_damper: float = 8.0     # kb
    k_r: float = 0.15
    ground_friction_decay: float = 4.0
    root_radius: float = 0.15
    contact_tol: float = 0.02
    joint_limits: np.ndarray = field(default_factory=default_joint_limits)

    def __post_init__(self):
        if abs(self.dt - 1.0 / 240.0) > 1e-15:
            raise ValueError("dt must be exactly 1/240 s")
        for name in ("kp", "kd", "k_prop", "k_turn", "balance_spring",
                     "balance_damper", "ground_friction_decay"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        self.joint_limits = np.asarray(self.joint_limits, dtype=float)

    @property
    def standing_height(self) -> float:
        return self.foot_clearance + self.thigh_len + self.shin_len


@dataclass
class ChairModel:
    """Parametric box chair: seat slab plus a backrest slab on the -x edge."""

    x: float = 0.0
    y: float = 0.0
    yaw: float = 0.0
    seat_half_x: float = 0.225
    seat_half_y: float = 0.225
    seat_top_z: float = 0.45
    seat_thickness: float = 0.10
    backrest_height: float = 0.85
    backrest_thickness: float = 0.05

    def __post_init__(self):
        if self.seat_top_z <= 0:
            raise ValueError("seat_top_z must be positive")
        self.yaw = wrap_angle(self.yaw)

    @property
    def seat_center(self) -> np.ndarray:
        """Center of the seat surface, xyz."""
        return np.array([self.x, self.y, self.seat_top_z])

    def world_to_chair(self, xy) -> np.ndarray:
        return np.asarray(
            [(xy[0] - self.x) * math.cos(self.yaw) + (xy[1] - self.y) * math.sin(self.yaw),
             -(xy[0] - self.x) * math.sin(self.yaw) + (xy[1] - self.y) * math.cos(self.yaw)])

    def chair_to_world(self, xy) -> np.ndarray:
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        return np.asarray([self.x + c * xy[0] - s * xy[1], self.y + s * xy[0] + c * xy[1]])


@dataclass
class HumanoidState:
    q: np.ndarray
    qdot: np.ndarray
    root_x: float = 0.0
    root_y: float = 0.0
    root_z: float = 0.91
    root_yaw: float = 0.0
    root_pitch: float = 0.0
    root_roll: float = 0.0
    root_vel: np.ndarray = field(default_factory=lambda: np.zeros(3))
    yaw_rate: float = 0.0
    pitch_rate: float = 0.0
    roll_rate: float = 0.0
    foot_contact: np.ndarray = field(default_factory=lambda: np.ones(2))
    seat_support: bool = False   # pelvis pinned on the seat surface
    over_seat: bool = False      # root horizontally over the seat footprint
    sim_time: float = 0.0

    def copy(self) -> "HumanoidState":
        return replace(
            self,
            q=self.q.copy(),
            qdot=self.qdot.copy(),
            root_vel=self.root_vel.copy(),
            foot_contact=self.foot_contact.copy(),
        )

    @property
    def root_xy(self) -> np.ndarray:
        return np.array([self.root_x, self.root_y])

    @property
    def root_pose(self) -> Pose2D:
        return Pose2D(self.root_x, self.root_y, self.root_yaw)


def leg_extensions(q: np.ndarray, cfg: SimConfig) -> np.ndarray:
    """Vertical hip-to-foot extension of each leg (left, right)."""
    hp = q[list(HIP_PITCH)]
    kn = q[list(KNEE)]
    return cfg.thigh_len * np.cos(hp) + cfg.shin_len * np.cos(hp + kn)


def fk_height(q: np.ndarray, cfg: SimConfig) -> float:
    """Pelvis height implied by leg FK when standing on the ground."""
    return cfg.foot_clearance + float(np.mean(leg_extensions(q, cfg)))


def foot_contacts(q: np.ndarray, root_z: float, cfg: SimConfig) -> np.ndarray:
    """A foot touches iff its FK extension reaches the ground within tolerance."""
    heights = root_z - cfg.foot_clearance - leg_extensions(q, cfg)
    return (heights <= cfg.contact_tol).astype(float)


TWO_PI_ = 2.0 * math.pi


def _over_footprint(xy, chair: ChairModel) -> bool:
    dx, dy = xy[0] - chair.x, xy[1] - chair.y
    c, s = math.cos(chair.yaw), math.sin(chair.yaw)
    return (abs(c * dx + s * dy) < chair.seat_half_x
            and abs(-s * dx + c * dy) < chair.seat_half_y)


def _chair_rects(chair: ChairModel, radius: float, block_seat: bool):
    """Expanded-by-radius blocking rectangles in the chair frame.

    The backrest always ejects; the seat only blocks entry from outside
    (a root already over the seat, e.g. seated, moves freely).
    """
    hx, hy = chair.seat_half_x, chair.seat_half_y
    bt = chair.backrest_thickness
    rects = [((-hx - bt - radius, -hx + radius, -hy - radius, hy + radius), True)]
    if block_seat:
        rects.append(((-hx - radius, hx + radius, -hy - radius, hy + radius), False))
    return rects


def _sweep_out(old, new, rect, eject_inside):
    """Project `new` out of an axis-aligned rect entered along old->new.

    Returns the corrected point, or None when the segment never enters.
    Tunneling-safe: uses the swept segment, not just the endpoint.
    """
    lo = (rect[0], rect[2])
    hi = (rect[1], rect[3])
    inside_old = all(lo[i] < old[i] < hi[i] for i in range(2))
    if inside_old:
        if not eject_inside:
            return None
        # degenerate start (should not arise along valid trajectories):
        # push out along the axis of least penetration
        pen = [min(new[i] - lo[i], hi[i] - new[i]) for i in range(2)]
        axis = 0 if pen[0] <= pen[1] else 1
        out = list(new)
        mid = 0.5 * (lo[axis] + hi[axis])
        out[axis] = lo[axis] if new[axis] <= mid else hi[axis]
        return tuple(out)
    t_enter, t_exit = -math.inf, math.inf
    enter_axis = -1
    for i in range(2):
        d = new[i] - old[i]
        if d == 0.0:
            if not (lo[i] < old[i] < hi[i]):
                return None
            continue
        t0 = (lo[i] - old[i]) / d
        t1 = (hi[i] - old[i]) / d
        tmin, tmax = min(t0, t1), max(t0, t1)
        if tmin > t_enter:
            t_enter = tmin
            enter_axis = i
        t_exit = min(t_exit, tmax)
    if t_enter > t_exit or t_enter > 1.0 or t_exit < 0.0 or enter_axis < 0:
        return None
    if t_enter < 0.0:
        return None
    # clamp the entering-axis coordinate back to the face that was crossed
    out = list(new)
    d = new[enter_axis] - old[enter_axis]
    out[enter_axis] = lo[enter_axis] if d > 0 else hi[enter_axis]
    return tuple(out)


def _resolve_chair_collision(old_xy, new_xy, chair: ChairModel, root_z: float,
                             cfg: SimConfig):
    block_seat = root_z < chair.seat_top_z + 0.05
    rects = _chair_rects(chair, cfg.root_radius, block_seat)
    c, s = math.cos(chair.yaw), math.sin(chair.yaw)
    dx, dy = old_xy[0] - chair.x, old_xy[1] - chair.y
    old_l = (c * dx + s * dy, -s * dx + c * dy)
    dx, dy = new_xy[0] - chair.x, new_xy[1] - chair.y
    new_l = (c * dx + s * dy, -s * dx + c * dy)
    for _ in range(3):  # settle interactions between adjacent slabs
        moved = False
        for rect, eject in rects:
            hit = _sweep_out(old_l, new_l, rect, eject)
            if hit is not None:
                new_l = hit
                moved = True
        if not moved:
            break
    return (chair.x + c * new_l[0] - s * new_l[1],
            chair.y + s * new_l[0] + c * new_l[1])


def step(state: HumanoidState, action: np.ndarray, chair: ChairModel,
         cfg: SimConfig) -> HumanoidState:
    """Advance one 1/240 s substep. `action` holds PD target joint angles.

    Update order: (1) joint PD integration with limit clamping, (2) pelvis
    height from FK or seat support, (3) stance propulsion / airborne friction
    decay on the root velocity, (4) horizontal move with chair collision
    projection, (5) stance-driven yaw, (6) pitch/roll spring-damper perturbed
    by the mean joint acceleration, (7) contact flag refresh.
    """
    action = np.asarray(action, dtype=float)
    if action.shape != (NUM_JOINTS,) or not np.all(np.isfinite(action)):
        raise ValueError("action must be a finite 21-vector")
    lim = cfg.joint_limits
    target = np.clip(action, lim[:, 0], lim[:, 1])
    return _substep(state, target, chair, cfg)


def control_step(state: HumanoidState, action: np.ndarray, chair: ChairModel,
                 cfg: SimConfig, substeps: int = 4) -> HumanoidState:
    """One 60 Hz control step: the PD target held over `substeps` physics
    substeps (240 Hz for the default 4)."""
    action = np.asarray(action, dtype=float)
    if action.shape != (NUM_JOINTS,) or not np.all(np.isfinite(action)):
        raise ValueError("action must be a finite 21-vector")
    lim = cfg.joint_limits
    target = np.clip(action, lim[:, 0], lim[:, 1])
    for _ in range(substeps):
        state = _substep(state, target, chair, cfg)
    return state


def _substep(state: HumanoidState, target: np.ndarray, chair: ChairModel,
             cfg: SimConfig) -> HumanoidState:
    lim = cfg.joint_limits
    dt = cfg.dt
    cos = math.cos

    # wrap-aware PD error, same wrapping rule as geometry.angle_diff
    d = target - state.q
    if abs(d).max() > math.pi:
        d -= TWO_PI_ * np.floor((d + math.pi) / TWO_PI_)
        np.add(d, TWO_PI_, out=d, where=d <= -math.pi)
    qacc = cfg.kp * d - cfg.kd * state.qdot
    qdot = state.qdot + qacc * dt
    q = np.clip(state.q + qdot * dt, lim[:, 0], lim[:, 1])

    # pelvis height: leg FK, or rest on the seat while squatting over it
    lhp, lkn = q[L_HIP_PITCH], q[L_KNEE]
    rhp, rkn = q[R_HIP_PITCH], q[R_KNEE]
    ext_l = cfg.thigh_len * cos(lhp) + cfg.shin_len * cos(lhp + lkn)
    ext_r = cfg.thigh_len * cos(rhp) + cfg.shin_len * cos(rhp + rkn)
    fk = cfg.foot_clearance + 0.5 * (ext_l + ext_r)
    over = _over_footprint((state.root_x, state.root_y), chair)
    seat_support = bool(over and fk <= chair.seat_top_z)
    root_z = chair.seat_top_z if seat_support else max(fk, 0.0)

    # root horizontal dynamics from stance-leg joint rates (previous contacts)
    contact_l = state.foot_contact[0] > 0.5
    contact_r = state.foot_contact[1] > 0.5
    c, s = cos(state.root_yaw), math.sin(state.root_yaw)
    vx, vy = state.root_vel[0], state.root_vel[1]
    yaw_rate = 0.0
    if contact_l or contact_r:
        a_fwd = a_lat = 0.0
        if contact_l:
            a_fwd -= qdot[L_HIP_PITCH]
            a_lat -= qdot[L_HIP_ROLL]
            yaw_rate -= qdot[L_HIP_YAW]
        if contact_r:
            a_fwd -= qdot[R_HIP_PITCH]
            a_lat -= qdot[R_HIP_ROLL]
            yaw_rate -= qdot[R_HIP_YAW]
        a_fwd *= cfg.k_prop
        a_lat *= cfg.k_prop
        yaw_rate *= cfg.k_turn
        vx += (a_fwd * c - a_lat * s) * dt
        vy += (a_fwd * s + a_lat * c) * dt
    else:
        decay = math.exp(-cfg.ground_friction_decay * dt)
        vx *= decay
        vy *= decay

    old_x, old_y = state.root_x, state.root_y
    new_x, new_y = old_x + vx * dt, old_y + vy * dt
    # chair collision only matters within reach of the chair slabs
    if abs(new_x - chair.x) < 1.2 and abs(new_y - chair.y) < 1.2:
        new_x, new_y = _resolve_chair_collision(
            (old_x, old_y), (new_x, new_y), chair, root_z, cfg)

    root_yaw = state.root_yaw + yaw_rate * dt
    if root_yaw > math.pi or root_yaw <= -math.pi:
        root_yaw -= TWO_PI_ * math.floor((root_yaw + math.pi) / TWO_PI_)
        if root_yaw <= -math.pi:
            root_yaw += TWO_PI_

    # pitch/roll track the abdomen, destabilized by erratic joint accelerations
    perturb = cfg.k_r * float(qacc.sum()) / NUM_JOINTS
    pitch_acc = cfg.balance_spring * (q[ABD_PITCH] - state.root_pitch) \
        - cfg.balance_damper * state.pitch_rate + perturb
    roll_acc = cfg.balance_spring * (q[ABD_ROLL] - state.root_roll) \
        - cfg.balance_damper * state.roll_rate + perturb
    pitch_rate = state.pitch_rate + pitch_acc * dt
    roll_rate = state.roll_rate + roll_acc * dt
    root_pitch = state.root_pitch + pitch_rate * dt
    root_roll = state.root_roll + roll_rate * dt

    # contact flags recomputable from (q, root_z)
    tol = cfg.contact_tol + cfg.foot_clearance - root_z
    foot = np.array([1.0 if -ext_l <= tol else 0.0,
                     1.0 if -ext_r <= tol else 0.0])

    vz = (root_z - state.root_z) / dt
    new = HumanoidState(
        q=q,
        qdot=qdot,
        root_x=new_x,
        root_y=new_y,
        root_z=root_z,
        root_yaw=root_yaw,
        root_pitch=root_pitch,
        root_roll=root_roll,
        root_vel=np.array([vx, vy, vz]),
        yaw_rate=yaw_rate,
        pitch_rate=pitch_rate,
        roll_rate=roll_rate,
        foot_contact=foot,
        seat_support=seat_support,
        over_seat=_over_footprint((new_x, new_y), chair),
        sim_time=state.sim_time + dt,
    )
    # a non-finite entry poisons the sum, so one scalar check suffices
    if not (math.isfinite(new_x) and math.isfinite(new_y)
            and math.isfinite(root_pitch) and math.isfinite(root_roll)
            and math.isfinite(vx) and math.isfinite(vy)
            and math.isfinite(float(qdot.sum()))):
        raise SimulationDiverged(new.sim_time)
    return new


def pelvis_seat_contact(state: HumanoidState, chair: ChairModel) -> bool:
    """True iff the root sits strictly over the seat footprint inside the
    +-0.02 m band around the seat surface."""
    if not _over_footprint(state.root_xy, chair):
        return False
    return abs(state.root_z - chair.seat_top_z) <= 0.02


FALL_HEIGHT_WALK = 0.78
FALL_HEIGHT_SIT = 0.54
YAW_DIVERGE_LIMIT = math.radians(45.0)
TILT_LIMIT = 1.0

RUNNING, FELL, YAW_DIVERGED = "running", "fell", "yaw_diverged"


def check_termination(state: HumanoidState, subtask: str, ref=None) -> str:
    """Early-termination status for one control step.

    Walk and turn episodes end below 0.78 m root height, sit (and the meta
    task, which must be allowed to sit) below 0.54 m unless the seat is the
    supporting surface: over the footprint the seat pins the root at its top,
    so the ground-referenced threshold does not apply there. Excessive
    pitch/roll always ends the episode. Turn episodes also end when the root
    yaw strays more than 45 degrees from the reference.
    """
    if subtask in ("sit", "meta"):
        supported = state.seat_support or state.over_seat
        if not supported and state.root_z < FALL_HEIGHT_SIT:
            return FELL
    else:
        if state.root_z < FALL_HEIGHT_WALK:
            return FELL
    if abs(state.root_pitch) > TILT_LIMIT or abs(state.root_roll) > TILT_LIMIT:
        return FELL
    if subtask in ("left_turn", "right_turn") and ref is not None:
        ref_yaw = ref.root_rpy_hat[1] if hasattr(ref, "root_rpy_hat") else float(ref)
        if abs(angle_diff(state.root_yaw, ref_yaw)) > YAW_DIVERGE_LIMIT:
            return YAW_DIVERGED
    return RUNNING


def standing_state(cfg: SimConfig, x: float = 0.0, y: float = 0.0,
                   yaw: float = 0.0) -> HumanoidState:
    q = np.zeros(NUM_JOINTS)
    st = HumanoidState(q=q, qdot=np.zeros(NUM_JOINTS), root_x=x, root_y=y,
                       root_z=fk_height(q, cfg), root_yaw=wrap_angle(yaw))
    st.foot_contact = foot_contacts(st.q, st.root_z, cfg)
    return st


ZONE_AZIMUTH_DEG = {1: (-60.0, 60.0), 2: (60.0, 120.0), 3: (120.0, 240.0)}
SPAWN_RADIUS = (1.8, 2.2)
SPAWN_YAW_JITTER = math.radians(30.0)


def spawn(zone: int, chair: ChairModel, rng: np.random.Generator,
          cfg: SimConfig) -> HumanoidState:
    """Standing humanoid placed in a curriculum zone around the chair.

    Draw order (fixed for reproducibility): radius, azimuth, side for the
    two-lobed Zone 2, then the yaw jitter.
    """
    if zone not in ZONE_AZIMUTH_DEG:
        raise ValueError(f"unknown zone {zone!r}")
    radius = rng.uniform(*SPAWN_RADIUS)
    lo, hi = ZONE_AZIMUTH_DEG[zone]
    az = math.radians(rng.uniform(lo, hi))
    if zone == 2 and rng.integers(0, 2) == 0:
        az = -az
    theta = chair.yaw + az
    x = chair.x + radius * math.cos(theta)
    y = chair.y + radius * math.sin(theta)
    toward = math.atan2(chair.y - y, chair.x - x)
    yaw = toward + rng.uniform(-SPAWN_YAW_JITTER, SPAWN_YAW_JITTER)
    return standing_state(cfg, x=x, y=y, yaw=yaw)


def reset_from_frame(frame, cfg: SimConfig) -> HumanoidState:
    """State with joints/root copied from a reference frame; root height and
    contacts are recomputed from FK rather than trusted."""
    q = np.clip(np.asarray(frame.q_hat, dtype=float),
                cfg.joint_limits[:, 0], cfg.joint_limits[:, 1])
    qdot = np.asarray(frame.qdot_hat, dtype=float).copy()
    pitch, yaw, roll = frame.root_rpy_hat
    c, s = math.cos(yaw), math.sin(yaw)
    v_local = np.asarray(frame.root_vel_hat, dtype=float)
    st = HumanoidState(
        q=q, qdot=qdot,
        root_x=float(frame.root_pos_hat[0]),
        root_y=float(frame.root_pos_hat[1]),
        root_z=fk_height(q, cfg),
        root_yaw=wrap_angle(yaw), root_pitch=float(pitch), root_roll=float(roll),
        root_vel=np.array([c * v_local[0] - s * v_local[1],
                           s * v_local[0] + c * v_local[1],
                           v_local[2]]),
    )
    st.foot_contact = foot_contacts(st.q, st.root_z, cfg)
    return st


def reset_from_pose_pool(pool, rng: np.random.Generator) -> HumanoidState:
    """Uniform draw from a pose pool (sequence of HumanoidState)."""
    poses = list(pool)
    if not poses:
        raise ValueError("pose pool is empty")
    idx = int(rng.integers(0, len(poses)))
    st = poses[idx].copy()
    st.sim_time = 0.0
    return st
