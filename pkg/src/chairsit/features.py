"""State vectors fed to the controllers.

Layout (offsets are frozen; checkpoints embed a hash of this table):

    [ 0:21)  joint angles, rad
    [21:42)  joint velocities * 0.1
    [42]     root height, m
    [43:46)  root linear velocity in the yaw frame (fwd, left, up) * 0.1
    [46]     root pitch
    [47]     root roll
    [48:50)  foot contact flags
    [50:52)  walk goal [sin(psi), cos(psi)]            (walk state only)
    [50:57)  chair displacement + relative quaternion  (sit / meta state)

Turn controllers consume the bare 50-d proprioceptive block. All blocks are
expressed relative to the humanoid frame, so the vectors are invariant to
rigid transforms of the world. The 0.1 velocity scaling is an observation
conditioning choice, not a physical quantity.
"""

import hashlib
import math

import numpy as np

from .geometry import azimuth_goal_feature, relative_quat
from .simenv import ChairModel, HumanoidState

PROPRIO_DIM = 50
WALK_DIM = 52
SIT_META_DIM = 57
VEL_SCALE = 0.1

SLICES = {
    "joint_angles": (0, 21),
    "joint_velocities": (21, 42),
    "root_height": (42, 43),
    "root_lin_vel": (43, 46),
    "root_pitch": (46, 47),
    "root_roll": (47, 48),
    "foot_contacts": (48, 50),
    "goal": (50, 52),
    "chair": (50, 57),
}


def layout_hash() -> str:
    desc = ";".join(f"{k}:{a}:{b}" for k, (a, b) in sorted(SLICES.items()))
    desc += f";vel_scale:{VEL_SCALE};dims:{PROPRIO_DIM}/{WALK_DIM}/{SIT_META_DIM}"
    return hashlib.sha256(desc.encode()).hexdigest()[:16]


def proprio_50(state: HumanoidState) -> np.ndarray:
    out = np.empty(PROPRIO_DIM)
    out[0:21] = state.q
    out[21:42] = state.qdot * VEL_SCALE
    out[42] = state.root_z
    c, s = math.cos(state.root_yaw), math.sin(state.root_yaw)
    vx, vy, vz = state.root_vel
    out[43] = (c * vx + s * vy) * VEL_SCALE
    out[44] = (-s * vx + c * vy) * VEL_SCALE
    out[45] = vz * VEL_SCALE
    out[46] = state.root_pitch
    out[47] = state.root_roll
    out[48:50] = state.foot_contact
    return out


def walk_state(state: HumanoidState, target) -> np.ndarray:
    out = np.empty(WALK_DIM)
    out[:PROPRIO_DIM] = proprio_50(state)
    out[50:52] = azimuth_goal_feature(target, state.root_pose)
    return out


def chair_state_7(state: HumanoidState, chair: ChairModel) -> np.ndarray:
    """Pelvis-to-seat displacement in the yaw frame, then the chair's
    relative rotation as a (w, x, y, z) quaternion."""
    out = np.empty(7)
    seat = chair.seat_center
    dx, dy = seat[0] - state.root_x, seat[1] - state.root_y
    c, s = math.cos(state.root_yaw), math.sin(state.root_yaw)
    out[0] = c * dx + s * dy
    out[1] = -s * dx + c * dy
    out[2] = seat[2] - state.root_z
    out[3:7] = relative_quat(chair.yaw, state.root_yaw).as_array()
    return out


def sit_meta_state(state: HumanoidState, chair: ChairModel) -> np.ndarray:
    out = np.empty(SIT_META_DIM)
    out[:PROPRIO_DIM] = proprio_50(state)
    out[50:57] = chair_state_7(state, chair)
    return out
