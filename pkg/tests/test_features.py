import math

import numpy as np
import pytest

from chairsit import features, simenv
from chairsit.features import (
    PROPRIO_DIM,
    SIT_META_DIM,
    WALK_DIM,
    chair_state_7,
    layout_hash,
    proprio_50,
    sit_meta_state,
    walk_state,
)
from chairsit.geometry import local_to_world, Pose2D
from chairsit.simenv import ChairModel, SimConfig, control_step, standing_state


def random_state(rng, cfg):
    st = standing_state(cfg, x=rng.uniform(-2, 2), y=rng.uniform(-2, 2),
                        yaw=rng.uniform(-math.pi, math.pi))
    st.q = rng.uniform(cfg.joint_limits[:, 0], cfg.joint_limits[:, 1]) * 0.7
    st.qdot = rng.normal(0, 2.0, 21)
    st.root_z = simenv.fk_height(st.q, cfg)
    st.root_vel = rng.normal(0, 1.0, 3)
    st.root_pitch = rng.uniform(-0.5, 0.5)
    st.root_roll = rng.uniform(-0.5, 0.5)
    st.foot_contact = simenv.foot_contacts(st.q, st.root_z, cfg)
    return st


def shift_state(st, dx, dy, dyaw):
    """Rigidly transform the whole world: rotate about the origin then move."""
    out = st.copy()
    c, s = math.cos(dyaw), math.sin(dyaw)
    out.root_x = c * st.root_x - s * st.root_y + dx
    out.root_y = s * st.root_x + c * st.root_y + dy
    out.root_yaw = st.root_yaw + dyaw
    out.root_vel = np.array([c * st.root_vel[0] - s * st.root_vel[1],
                             s * st.root_vel[0] + c * st.root_vel[1],
                             st.root_vel[2]])
    return out


def shift_chair(chair, dx, dy, dyaw):
    c, s = math.cos(dyaw), math.sin(dyaw)
    return ChairModel(x=c * chair.x - s * chair.y + dx,
                      y=s * chair.x + c * chair.y + dy,
                      yaw=chair.yaw + dyaw)


def test_dimensions():
    cfg = SimConfig()
    st = standing_state(cfg)
    chair = ChairModel(x=1.0)
    assert proprio_50(st).shape == (PROPRIO_DIM,)
    assert walk_state(st, (2.0, 0.0)).shape == (WALK_DIM,)
    assert chair_state_7(st, chair).shape == (7,)
    assert sit_meta_state(st, chair).shape == (SIT_META_DIM,)
    assert WALK_DIM == 52 and SIT_META_DIM == 57


def test_standing_slots():
    cfg = SimConfig()
    st = standing_state(cfg)
    f = proprio_50(st)
    assert np.all(f[0:21] == 0.0)
    assert np.all(f[21:42] == 0.0)
    assert f[42] == pytest.approx(0.91)
    assert np.all(f[48:50] == 1.0)  # both feet planted


def test_walk_goal_slots():
    cfg = SimConfig()
    st = standing_state(cfg)
    f = walk_state(st, (3.0, 0.0))
    assert np.allclose(f[50:52], [0.0, 1.0])


def test_chair_state_cases():
    cfg = SimConfig()
    st = standing_state(cfg)
    chair = ChairModel(x=st.root_x, y=st.root_y)
    st.root_z = chair.seat_top_z
    f = chair_state_7(st, chair)
    assert np.allclose(f, [0, 0, 0, 1, 0, 0, 0], atol=1e-12)
    # chair 1 m ahead at the same yaw
    st = standing_state(cfg)
    chair = ChairModel(x=1.0, y=0.0)
    f = chair_state_7(st, chair)
    assert f[0] == pytest.approx(1.0)
    assert f[1] == pytest.approx(0.0)
    assert f[2] == pytest.approx(chair.seat_top_z - st.root_z)
    assert np.allclose(f[3:7], [1, 0, 0, 0])


def test_sit_meta_is_concatenation():
    cfg = SimConfig()
    rng = np.random.default_rng(0)
    st = random_state(rng, cfg)
    chair = ChairModel(x=1.0, yaw=0.4)
    f = sit_meta_state(st, chair)
    assert np.array_equal(f[:50], proprio_50(st))
    assert np.array_equal(f[50:], chair_state_7(st, chair))


def test_world_frame_invariance():
    cfg = SimConfig()
    rng = np.random.default_rng(1)
    for _ in range(100):
        st = random_state(rng, cfg)
        chair = ChairModel(x=rng.uniform(-1, 1), y=rng.uniform(-1, 1),
                           yaw=rng.uniform(-math.pi, math.pi))
        target = rng.uniform(-3, 3, size=2)
        dx, dy, dyaw = rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-math.pi, math.pi)
        st2 = shift_state(st, dx, dy, dyaw)
        chair2 = shift_chair(chair, dx, dy, dyaw)
        c, s = math.cos(dyaw), math.sin(dyaw)
        target2 = np.array([c * target[0] - s * target[1] + dx,
                            s * target[0] + c * target[1] + dy])
        assert np.allclose(walk_state(st, target), walk_state(st2, target2), atol=1e-9)
        assert np.allclose(sit_meta_state(st, chair), sit_meta_state(st2, chair2), atol=1e-9)


def test_purity():
    cfg = SimConfig()
    rng = np.random.default_rng(2)
    st = random_state(rng, cfg)
    chair = ChairModel(x=0.5)
    assert np.array_equal(sit_meta_state(st, chair), sit_meta_state(st, chair))


def test_magnitude_bound_along_rollouts():
    cfg = SimConfig()
    chair = ChairModel()
    rng = np.random.default_rng(3)
    st = standing_state(cfg, x=1.5)
    for _ in range(300):
        a = rng.normal(0, 0.3, 21)
        st = control_step(st, a, chair, cfg)
        f = sit_meta_state(st, chair)
        assert np.abs(f).max() < 50.0


def test_layout_hash_stable():
    assert layout_hash() == layout_hash()
    assert len(layout_hash()) == 16
