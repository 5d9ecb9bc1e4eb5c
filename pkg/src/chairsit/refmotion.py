"""Reference motion clips: CSV format, sampling, and synthetic generators.

A clip is a 60 Hz sequence of 21 joint angles, joint velocities, root pose
and root velocity. The CSV layout is one row per frame:

    t,q00..q20,dq00..dq20(optional),rx,ry,rz,pitch,yaw,roll,vx,vy,vz

UTF-8, decimal point '.', angles in radians, positions in meters. The
velocity columns vx,vy,vz are expressed in the root heading frame (forward,
left, up) so that clips stay meaningful under rigid transforms. When the
dq columns are absent, joint velocities are rebuilt by finite differences.

Real retargeted mocap can be dropped in through this format; the bundled
generators synthesize walk / turn-in-place / sit-down clips that are
consistent with the reduced-order simulator's foot-contact model.
"""

import csv
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .geometry import angle_diff, wrap_angle
from .simenv import (
    HIP_PITCH,
    HIP_YAW,
    KNEE,
    NUM_JOINTS,
    SimConfig,
    foot_contacts,
)

CLIP_FPS = 60.0
LOOP_CLOSE_TOL = 0.05  # rad per joint between first and last frame


class ClipParseError(ValueError):
    pass


@dataclass
class ReferenceFrame:
    q_hat: np.ndarray
    qdot_hat: np.ndarray
    root_pos_hat: np.ndarray   # xyz, world
    root_rpy_hat: np.ndarray   # pitch, yaw, roll
    root_vel_hat: np.ndarray   # forward, left, up (heading frame)


@dataclass
class ReferenceClip:
    """Struct-of-arrays clip; `frame(i)` materializes a single frame."""

    q: np.ndarray               # (n, 21)
    qdot: np.ndarray            # (n, 21)
    root_pos: np.ndarray        # (n, 3)
    root_rpy: np.ndarray        # (n, 3) pitch, yaw, roll
    root_vel: np.ndarray        # (n, 3) heading frame
    name: str = "clip"
    loopable: bool = False
    fps: float = CLIP_FPS

    def __post_init__(self):
        n = len(self.q)
        if n < 2:
            raise ValueError("a clip needs at least 2 frames")
        for arr in (self.q, self.qdot, self.root_pos, self.root_rpy, self.root_vel):
            if len(arr) != n or not np.all(np.isfinite(arr)):
                raise ValueError("clip arrays must align and be finite")
        if self.loopable:
            gap = np.abs(angle_diff(self.q[0], self.q[-1]))
            if gap.max() >= LOOP_CLOSE_TOL:
                raise ValueError(
                    f"loopable clip does not close: max joint gap {gap.max():.3f} rad")

    def __len__(self):
        return len(self.q)

    @property
    def duration(self) -> float:
        """Loopable clips cycle with period n/fps; others end at (n-1)/fps."""
        n = len(self.q)
        return n / self.fps if self.loopable else (n - 1) / self.fps

    def frame(self, i: int) -> ReferenceFrame:
        return ReferenceFrame(
            q_hat=self.q[i].copy(), qdot_hat=self.qdot[i].copy(),
            root_pos_hat=self.root_pos[i].copy(),
            root_rpy_hat=self.root_rpy[i].copy(),
            root_vel_hat=self.root_vel[i].copy())


def finite_diff_velocities(q: np.ndarray, fps: float = CLIP_FPS) -> np.ndarray:
    """qdot[t] = wrap(q[t+1] - q[t]) * fps, last frame copying the previous."""
    qd = angle_diff(q[1:], q[:-1]) * fps
    return np.vstack([qd, qd[-1]])


CSV_BASE_COLS = (["t"] + [f"q{j:02d}" for j in range(NUM_JOINTS)],
                 ["rx", "ry", "rz", "pitch", "yaw", "roll", "vx", "vy", "vz"])
CSV_DQ_COLS = [f"dq{j:02d}" for j in range(NUM_JOINTS)]


def clip_header(with_velocities: bool = True) -> list[str]:
    head, tail = CSV_BASE_COLS
    return head + (CSV_DQ_COLS if with_velocities else []) + tail


def load_clip(path, loopable: bool | None = None) -> ReferenceClip:
    """Read a clip CSV. When `loopable` is None it is inferred from whether
    the first and last joint angles close within the loop tolerance."""
    rows = []
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise ClipParseError(f"{path}: empty file") from None
        with_dq = "dq00" in header
        expected = clip_header(with_dq)
        if [h.strip() for h in header] != expected:
            raise ClipParseError(
                f"{path}: bad header, expected {','.join(expected)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(expected):
                raise ClipParseError(
                    f"{path}:{lineno}: expected {len(expected)} columns, got {len(row)}")
            try:
                vals = [float(v) for v in row]
            except ValueError as e:
                raise ClipParseError(f"{path}:{lineno}: {e}") from None
            if not all(math.isfinite(v) for v in vals):
                raise ClipParseError(f"{path}:{lineno}: non-finite value")
            rows.append(vals)
    if len(rows) < 2:
        raise ClipParseError(f"{path}: a clip needs at least 2 frames")
    data = np.array(rows)
    t = data[:, 0]
    dt_ref = 1.0 / CLIP_FPS
    if np.abs(np.diff(t) - dt_ref).max() > 1e-6:
        raise ClipParseError(f"{path}: rows must be spaced exactly 1/60 s apart")
    q = wrap_angle(data[:, 1:1 + NUM_JOINTS])
    col = 1 + NUM_JOINTS
    if with_dq:
        qdot = data[:, col:col + NUM_JOINTS]
        col += NUM_JOINTS
    else:
        qdot = finite_diff_velocities(q)
    root_pos = data[:, col:col + 3]
    root_rpy = wrap_angle(data[:, col + 3:col + 6])
    root_vel = data[:, col + 6:col + 9]
    if loopable is None:
        loopable = bool(np.abs(angle_diff(q[0], q[-1])).max() < LOOP_CLOSE_TOL)
    name = os.path.splitext(os.path.basename(str(path)))[0]
    return ReferenceClip(q=q, qdot=qdot, root_pos=root_pos, root_rpy=root_rpy,
                         root_vel=root_vel, name=name, loopable=loopable)


def save_clip(path, clip: ReferenceClip) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(clip_header(True))
        for i in range(len(clip)):
            row = [i / clip.fps]
            row += list(clip.q[i]) + list(clip.qdot[i])
            row += list(clip.root_pos[i]) + list(clip.root_rpy[i]) + list(clip.root_vel[i])
            w.writerow([f"{v:.17g}" for v in row])


def sample_frame(clip: ReferenceClip, t: float) -> ReferenceFrame:
    """Linear, angle-aware interpolation at time t.

    Loopable clips wrap modulo their duration (the segment from the last
    frame back to the first is part of the cycle); others clamp at the end.
    """
    if t < 0:
        raise ValueError("t must be non-negative")
    n = len(clip)
    if clip.loopable:
        t = math.fmod(t, clip.duration)
        pos = t * clip.fps
        i0 = int(pos)
        i1 = (i0 + 1) % n
        a = pos - i0
    else:
        if t >= clip.duration:
            return clip.frame(n - 1)
        pos = t * clip.fps
        i0 = int(pos)
        i1 = min(i0 + 1, n - 1)
        a = pos - i0
    if a == 0.0:
        return clip.frame(i0)
    q = wrap_angle(clip.q[i0] + a * angle_diff(clip.q[i1], clip.q[i0]))
    rpy = wrap_angle(clip.root_rpy[i0] + a * angle_diff(clip.root_rpy[i1], clip.root_rpy[i0]))
    lerp = lambda arr: (1.0 - a) * arr[i0] + a * arr[i1]
    return ReferenceFrame(q_hat=q, qdot_hat=lerp(clip.qdot),
                          root_pos_hat=lerp(clip.root_pos), root_rpy_hat=rpy,
                          root_vel_hat=lerp(clip.root_vel))


def reference_state_init(clip: ReferenceClip, rng: np.random.Generator):
    """Uniform random starting frame for imitation episodes.

    The final frame of a non-loopable clip leaves nothing to imitate, so it
    is excluded from the draw.
    """
    usable = len(clip) if clip.loopable else len(clip) - 1
    idx = int(rng.integers(0, usable))
    return idx, clip.frame(idx)


def nearest_frame_index(clip: ReferenceClip, q: np.ndarray) -> int:
    """Clip frame whose pose is closest to q (sum of squared angle diffs)."""
    d = angle_diff(clip.q, q[None, :])
    return int(np.argmin(np.sum(d * d, axis=1)))


# ---------------------------------------------------------------------------
# synthetic generators

GAIT_PERIOD_RANGE = (0.6, 1.6)
SIT_DURATION_RANGE = (1.5, 3.0)


@dataclass
class GeneratorParams:
    period: float = 1.0          # gait cycle length, s
    speed: float = 1.0           # walk forward speed, m/s
    turn_rate: float = 0.6       # turn-in-place yaw rate, rad/s
    sit_duration: float = 2.0    # s
    hip_amplitude: float = 0.45  # walk hip swing, rad
    knee_lift: float = 0.8       # swing-leg knee flexion, rad
    sit_hip: float = 1.5         # final hip flexion of the sit pose, rad
    sit_height: float = 0.49     # FK pelvis height of the final sit pose, m
    sit_drift: float = 0.30      # backward root travel while sitting, m
    sim: SimConfig = field(default_factory=SimConfig)


def _gait_phases(period: float, fps: float) -> np.ndarray:
    n = int(round(period * fps))
    # start at a phase where every oscillating joint has zero slope so the
    # loop closes within tolerance even at 0.6 s periods
    return math.pi / 2 + 2.0 * math.pi * np.arange(n) / n


def _fk_heights(q: np.ndarray, sim: SimConfig) -> np.ndarray:
    hp = q[:, list(HIP_PITCH)]
    kn = q[:, list(KNEE)]
    ext = sim.thigh_len * np.cos(hp) + sim.shin_len * np.cos(hp + kn)
    return sim.foot_clearance + ext.mean(axis=1)


def _assemble(q, root_pos, root_rpy, root_vel, name, loopable):
    return ReferenceClip(q=q, qdot=finite_diff_velocities(q), root_pos=root_pos,
                         root_rpy=root_rpy, root_vel=root_vel, name=name,
                         loopable=loopable)


def _synth_walk(p: GeneratorParams) -> ReferenceClip:
    phases = _gait_phases(p.period, CLIP_FPS)
    n = len(phases)
    q = np.zeros((n, NUM_JOINTS))
    sin, cos = np.sin(phases), np.cos(phases)
    q[:, HIP_PITCH[0]] = p.hip_amplitude * sin
    q[:, HIP_PITCH[1]] = -p.hip_amplitude * sin
    q[:, KNEE[0]] = -p.knee_lift * np.maximum(0.0, cos) ** 2
    q[:, KNEE[1]] = -p.knee_lift * np.maximum(0.0, -cos) ** 2
    t = np.arange(n) / CLIP_FPS
    root_pos = np.zeros((n, 3))
    root_pos[:, 0] = p.speed * t
    root_pos[:, 2] = _fk_heights(q, p.sim)
    root_vel = np.zeros((n, 3))
    root_vel[:, 0] = p.speed
    root_vel[:, 2] = np.gradient(root_pos[:, 2], 1.0 / CLIP_FPS)
    return _assemble(q, root_pos, np.zeros((n, 3)), root_vel, "walk", True)


def _turn_yaw_gain(q: np.ndarray, omega: float, sim: SimConfig) -> float:
    """Yaw advance per cycle of a unit-amplitude hip-yaw oscillation, under
    the simulator's contact gating. Used to calibrate the amplitude."""
    heights = _fk_heights(q, sim)
    total = 0.0
    n = len(q)
    for k in range(n):
        contacts = foot_contacts(q[k], heights[k], sim)
        rate_l = omega * math.cos(math.pi / 2 + 2 * math.pi * k / n)
        # left hip yaw = +sin, right = -sin; stance legs drive the root
        s = 0.0
        if contacts[0] > 0.5:
            s += -rate_l
        if contacts[1] > 0.5:
            s += rate_l
        total += sim.k_turn * s / CLIP_FPS
    return total


def _synth_turn(p: GeneratorParams, direction: float, name: str) -> ReferenceClip:
    phases = _gait_phases(p.period, CLIP_FPS)
    n = len(phases)
    q = np.zeros((n, NUM_JOINTS))
    sin, cos = np.sin(phases), np.cos(phases)
    q[:, KNEE[0]] = -p.knee_lift * np.maximum(0.0, cos) ** 2
    q[:, KNEE[1]] = -p.knee_lift * np.maximum(0.0, -cos) ** 2
    omega = 2.0 * math.pi / p.period
    per_cycle = _turn_yaw_gain(q, omega, p.sim)
    want = p.turn_rate * p.period
    amp = want / per_cycle if abs(per_cycle) > 1e-9 else 0.0
    amp = float(np.clip(amp, -0.95, 0.95))  # stay inside hip yaw limits
    q[:, HIP_YAW[0]] = direction * amp * sin
    q[:, HIP_YAW[1]] = -direction * amp * sin
    t = np.arange(n) / CLIP_FPS
    root_rpy = np.zeros((n, 3))
    root_rpy[:, 1] = wrap_angle(direction * p.turn_rate * t)
    root_pos = np.zeros((n, 3))
    root_pos[:, 2] = _fk_heights(q, p.sim)
    return _assemble(q, root_pos, root_rpy, np.zeros((n, 3)), name, True)


def _sit_knee_for_height(hip: float, height: float, sim: SimConfig) -> float:
    c = (height - sim.foot_clearance - sim.thigh_len * math.cos(hip)) / sim.shin_len
    ang = math.acos(min(1.0, max(-1.0, c)))
    return ang - hip  # shin tilted forward, matching a natural sit


def _synth_sit(p: GeneratorParams) -> ReferenceClip:
    n = int(round(p.sit_duration * CLIP_FPS)) + 1
    u = np.linspace(0.0, 1.0, n)
    s = 3.0 * u**2 - 2.0 * u**3  # smoothstep, monotone flexion
    knee_f = _sit_knee_for_height(p.sit_hip, p.sit_height, p.sim)
    q = np.zeros((n, NUM_JOINTS))
    for hp in HIP_PITCH:
        q[:, hp] = p.sit_hip * s
    for kn in KNEE:
        q[:, kn] = knee_f * s
    root_pos = np.zeros((n, 3))
    root_pos[:, 0] = -p.sit_drift * s
    root_pos[:, 2] = _fk_heights(q, p.sim)
    root_vel = np.zeros((n, 3))
    root_vel[:, 0] = np.gradient(root_pos[:, 0], 1.0 / CLIP_FPS)
    root_vel[:, 2] = np.gradient(root_pos[:, 2], 1.0 / CLIP_FPS)
    return _assemble(q, root_pos, np.zeros((n, 3)), root_vel, "sit", False)


SUBTASK_KINDS = ("walk", "left_turn", "right_turn", "sit")


def synth_clip(kind: str, params: GeneratorParams | None = None) -> ReferenceClip:
    """Generate a reference clip for one subtask.

    walk: anti-phase hip swing with swing-leg knee lifts, forward root
    velocity equal to the configured speed. left/right_turn: in-place
    hip-yaw ratcheting calibrated against the contact model so the root yaw
    reference advances at the configured rate. sit: monotone hip/knee
    flexion lowering the FK pelvis height from standing to the configured
    seat height while the root drifts backward.
    """
    p = params or GeneratorParams()
    if kind in ("walk", "left_turn", "right_turn"):
        if not GAIT_PERIOD_RANGE[0] <= p.period <= GAIT_PERIOD_RANGE[1]:
            raise ValueError(f"gait period {p.period} outside {GAIT_PERIOD_RANGE}")
    if kind == "walk":
        return _synth_walk(p)
    if kind == "left_turn":
        return _synth_turn(p, +1.0, "left_turn")
    if kind == "right_turn":
        return _synth_turn(p, -1.0, "right_turn")
    if kind == "sit":
        if not SIT_DURATION_RANGE[0] <= p.sit_duration <= SIT_DURATION_RANGE[1]:
            raise ValueError(f"sit duration {p.sit_duration} outside {SIT_DURATION_RANGE}")
        return _synth_sit(p)
    raise ValueError(f"unknown clip kind {kind!r}")


def synth_holistic(params: GeneratorParams | None = None,
                   walk_cycles: int = 2, turn_angle: float = math.pi,
                   turn_dir: float = +1.0) -> tuple[ReferenceClip, np.ndarray]:
    """Concatenated walk -> turn -> sit clip for the non-hierarchical
    baselines. Returns the clip and the seat-center offset (x, y) implied by
    its final pelvis position, expressed in the clip's start frame."""
    p = params or GeneratorParams()
    walk = _synth_walk(p)
    turn = _synth_turn(p, turn_dir, "turn")
    sit = _synth_sit(p)
    cycles_needed = int(math.ceil(abs(turn_angle) / (p.turn_rate * p.period)))

    # walk segment: straight line along +x
    qs = [walk.q] * walk_cycles
    q_walk = np.vstack(qs)
    nw = len(q_walk)
    tw = np.arange(nw) / CLIP_FPS
    pos_walk = np.zeros((nw, 3))
    pos_walk[:, 0] = p.speed * tw
    pos_walk[:, 2] = _fk_heights(q_walk, p.sim)
    rpy_walk = np.zeros((nw, 3))
    vel_walk = np.zeros((nw, 3))
    vel_walk[:, 0] = p.speed
    walk_end_x = p.speed * nw / CLIP_FPS

    # turn segment: rotate in place by turn_angle
    q_turn = np.vstack([turn.q] * cycles_needed)
    nt = len(q_turn)
    tt = np.arange(nt) / CLIP_FPS
    yaw = np.clip(turn_dir * p.turn_rate * tt, -abs(turn_angle), abs(turn_angle))
    pos_turn = np.zeros((nt, 3))
    pos_turn[:, 0] = walk_end_x
    pos_turn[:, 2] = _fk_heights(q_turn, p.sim)
    rpy_turn = np.zeros((nt, 3))
    rpy_turn[:, 1] = yaw
    vel_turn = np.zeros((nt, 3))

    # sit segment: backward drift along the post-turn heading
    q_sit = sit.q
    ns = len(q_sit)
    final_yaw = float(yaw[-1])
    c, s = math.cos(final_yaw), math.sin(final_yaw)
    drift = sit.root_pos[:, 0]  # negative x in the sit clip's own frame
    pos_sit = np.zeros((ns, 3))
    pos_sit[:, 0] = walk_end_x + c * drift
    pos_sit[:, 1] = s * drift
    pos_sit[:, 2] = sit.root_pos[:, 2]
    rpy_sit = np.zeros((ns, 3))
    rpy_sit[:, 1] = final_yaw
    vel_sit = sit.root_vel.copy()

    q_all = np.vstack([q_walk, q_turn, q_sit])
    pos_all = np.vstack([pos_walk, pos_turn, pos_sit])
    rpy_all = wrap_angle(np.vstack([rpy_walk, rpy_turn, rpy_sit]))
    vel_all = np.vstack([vel_walk, vel_turn, vel_sit])
    clip = _assemble(q_all, pos_all, rpy_all, vel_all, "holistic", False)
    seat_offset = pos_sit[-1, :2].copy()
    return clip, seat_offset
