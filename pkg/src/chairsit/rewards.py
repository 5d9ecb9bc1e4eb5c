"""Reward terms for subtask imitation and the sitting meta task.

Imitation terms compare the humanoid against a reference frame; goal terms
measure task progress. The subtask reward is their sum. The meta reward pays
1 per step while the pelvis touches the seat and otherwise rewards approach
speed toward the seat center.
"""

import math
from dataclasses import dataclass

import numpy as np

from .geometry import angle_diff


@dataclass
class RewardWeights:
    w_p: float = 0.5
    w_v: float = 0.05
    a_p: float = 1.0
    a_v: float = 10.0


DEFAULT_WEIGHTS = RewardWeights()


def pose_reward(q, q_hat, w: RewardWeights = DEFAULT_WEIGHTS) -> float:
    q = np.asarray(q, dtype=float)
    q_hat = np.asarray(q_hat, dtype=float)
    if q.shape != q_hat.shape:
        raise ValueError(f"pose length mismatch: {q.shape} vs {q_hat.shape}")
    d = angle_diff(q, q_hat)
    return math.exp(-w.a_p * float(np.dot(d, d)))


def velocity_reward(qdot, qdot_hat, w: RewardWeights = DEFAULT_WEIGHTS) -> float:
    qdot = np.asarray(qdot, dtype=float)
    qdot_hat = np.asarray(qdot_hat, dtype=float)
    if qdot.shape != qdot_hat.shape:
        raise ValueError(f"velocity length mismatch: {qdot.shape} vs {qdot_hat.shape}")
    d = qdot - qdot_hat
    return math.exp(-w.a_v * float(np.dot(d, d)))


def similarity_reward(state, ref, w: RewardWeights = DEFAULT_WEIGHTS) -> float:
    """Weighted pose + velocity imitation term against a reference frame."""
    return (w.w_p * pose_reward(state.q, ref.q_hat, w)
            + w.w_v * velocity_reward(state.qdot, ref.qdot_hat, w))


def walk_goal_stage1(v, v_hat) -> float:
    """Match the 3-d root velocity of the reference (gait-shaping stage)."""
    d = np.asarray(v, dtype=float) - np.asarray(v_hat, dtype=float)
    return 0.5 * math.exp(-10.0 * float(np.dot(d, d)))


def walk_goal_stage2(d_next: float, d_curr: float, dt: float) -> float:
    """Reward approaching the walk target (sigmoid of the approach rate)."""
    v = (d_next - d_curr) / dt
    x = 10.0 * v
    if x > 500.0:
        return 0.0
    return 0.1 / (1.0 + math.exp(x))


def turn_goal(rpy, rpy_hat) -> float:
    """Match the root pitch/yaw/roll of the reference."""
    d = angle_diff(np.asarray(rpy, dtype=float), np.asarray(rpy_hat, dtype=float))
    return 0.1 * math.exp(-10.0 * float(np.dot(d, d)))


def sit_goal(d3_next: float, d3_curr: float, dt: float) -> float:
    """Reward closing the 3-d pelvis-to-seat-center distance."""
    return 0.5 * (-(d3_next - d3_curr) / dt)


def subtask_reward(similarity: float, goal: float) -> float:
    return similarity + goal


def meta_reward(contact: bool, d3_next: float, d3_curr: float, dt: float) -> float:
    if contact:
        return 1.0
    return sit_goal(d3_next, d3_curr, dt)
