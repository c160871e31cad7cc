import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dualdrm.errors import InputError, JointLimitError, ModelError
from dualdrm.kinematics import (CollisionSphere, RobotModel, chain_self_collision,
                                chain_voxel_collision, collision_conditions, config_collision,
                                forward_kinematics, inter_arm_collision, robot_from_dict,
                                robot_to_dict, rpy_matrix)
from dualdrm.robots import desk_robot, planar_demo_robot
from dualdrm.voxel_world import OccupancySet, VoxelGrid, voxel_of

from instances import PI, crossing_robot, joint, planar_arm


def arm1_centers(model, q_arm):
    cfg = model.full_config([0.0] + list(q_arm) + [0.0, 0.0])
    return forward_kinematics(model, cfg).of("arm1")


# -- forward kinematics ---------------------------------------------------------

def test_fk_planar_zero():
    np.testing.assert_allclose(arm1_centers(planar_arm(), (0, 0)), [[1, 0, 0], [2, 0, 0]],
                               atol=1e-12)


@pytest.mark.parametrize("q, expected", [
    ((PI / 2, 0.0), [[0, 1, 0], [0, 2, 0]]),
    ((PI / 2, -PI / 2), [[0, 1, 0], [1, 1, 0]]),
])
def test_fk_planar_hand_trig(q, expected):
    # oracle: x = cos q1 + cos(q1+q2), y = sin q1 + sin(q1+q2)
    q1, q2 = q
    hand = [[math.cos(q1), math.sin(q1), 0],
            [math.cos(q1) + math.cos(q1 + q2), math.sin(q1) + math.sin(q1 + q2), 0]]
    np.testing.assert_allclose(hand, expected, atol=1e-12)
    np.testing.assert_allclose(arm1_centers(planar_arm(), q), expected, atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.floats(-PI, PI), st.floats(-PI, PI))
def test_fk_planar_matches_closed_form(q1, q2):
    c = arm1_centers(planar_arm(), (q1, q2))
    tip = [math.cos(q1) + math.cos(q1 + q2), math.sin(q1) + math.sin(q1 + q2), 0]
    np.testing.assert_allclose(c[1], tip, atol=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=8, max_size=8))
def test_fk_rigid_link_distances(u):
    """Spheres on one link keep their mutual distance under any configuration."""
    m = desk_robot()
    lim = m.full_limits
    q = lim[:, 0] + (np.array(u) + 1) / 2 * (lim[:, 1] - lim[:, 0])
    a1 = forward_kinematics(m, m.full_config(q)).of("arm1")
    # spheres 1 and 2 sit on the upper arm 0.10 m apart; 3 and 4 on the forearm
    assert np.linalg.norm(a1[1] - a1[2]) == pytest.approx(0.10, abs=1e-12)
    assert np.linalg.norm(a1[3] - a1[4]) == pytest.approx(0.10, abs=1e-12)


def test_fk_rejects_out_of_limit_and_bad_length():
    m = planar_arm(q_limits=(-1.0, 1.0))
    with pytest.raises(JointLimitError):
        forward_kinematics(m, m.full_config([0, 1.5, 0, 0, 0]))
    with pytest.raises(InputError):
        m.full_config([0, 0])


def test_rpy_matrix_is_rotation():
    r = rpy_matrix(0.3, -0.7, 1.9)
    np.testing.assert_allclose(r @ r.T, np.eye(3), atol=1e-12)
    assert np.linalg.det(r) == pytest.approx(1.0)


def test_model_validation():
    with pytest.raises(ModelError):
        joint((0, 0, 2))
    with pytest.raises(ModelError):
        joint((0, 0, 1), limits=(1, -1))
    with pytest.raises(ModelError):
        CollisionSphere(0, (0, 0, 0), 0.0)
    with pytest.raises(ModelError):
        RobotModel(torso=(joint((0, 0, 1)),), arm1=(), arm2=(joint((0, 0, 1)),),
                   mount1=np.eye(4), mount2=np.eye(4))


# -- self collision ---------------------------------------------------------------

def folding_arm(arm_spheres, torso_spheres=(), deny=frozenset(), allow=frozenset()):
    """Two 0.5 m links rotating about z on a fixed torso."""
    torso = (joint((0, 0, 1), limits=(0, 0)),)
    arm = (joint((0, 0, 1)), joint((0, 0, 1), xyz=(0.5, 0, 0)))
    return RobotModel(torso=torso, arm1=arm, arm2=arm, mount1=np.eye(4), mount2=np.eye(4),
                      torso_spheres=torso_spheres, arm1_spheres=arm_spheres,
                      arm2_spheres=arm_spheres, self_collision_deny=deny,
                      self_collision_allow=allow)


ON_TORSO = (CollisionSphere(0, (0, 0, 0), 0.1),)
TIP_SPHERES = (CollisionSphere(0, (0.25, 0, 0), 0.05), CollisionSphere(1, (0.45, 0, 0), 0.05))


def test_self_collision_straight_is_free():
    m = folding_arm(TIP_SPHERES, ON_TORSO)
    assert not chain_self_collision(m, 1, m.chain_config(1, [0, 0, 0]))


def test_self_collision_folded_onto_torso():
    m = folding_arm(TIP_SPHERES, ON_TORSO)
    # folded 180 deg: forearm sphere at 0.5 - 0.45 = 0.05 m from the torso sphere centre,
    # closer than the radii sum 0.15
    c = forward_kinematics(m, m.full_config([0, 0, PI, 0, 0])).of("arm1")
    np.testing.assert_allclose(c[1], [0.05, 0, 0], atol=1e-12)
    assert chain_self_collision(m, 1, m.chain_config(1, [0, 0, PI]))


def test_self_collision_adjacent_pair_exemptions():
    # folded, the forearm sphere lands exactly on the upper-arm sphere (adjacent links)
    spheres = (CollisionSphere(0, (0.25, 0, 0), 0.05), CollisionSphere(1, (0.25, 0, 0), 0.05))
    pair = frozenset({frozenset({("arm1", 0), ("arm1", 1)})})
    q = [0, 0, PI]
    plain = folding_arm(spheres)
    assert not chain_self_collision(plain, 1, plain.chain_config(1, q))
    forced = folding_arm(spheres, allow=pair)
    assert chain_self_collision(forced, 1, forced.chain_config(1, q))
    denied = folding_arm(spheres, allow=pair, deny=pair)
    assert not chain_self_collision(denied, 1, denied.chain_config(1, q))


def test_adjacent_links_exempt_by_default():
    m = desk_robot()
    # shoulder sphere (link 0) and upper-arm spheres (link 1) overlap at every configuration
    assert not chain_self_collision(m, 1, m.chain_config(1, np.zeros(5)))


# -- inter-arm collision -------------------------------------------------------------

def test_inter_arm_wide_apart_free():
    m = crossing_robot()
    cfg = m.full_config([0, 0, PI / 2, 0, -PI / 2, 0])
    assert not inter_arm_collision(m, cfg)


def test_inter_arm_meeting_in_front():
    m = crossing_robot()
    # left yaw -45 deg, right yaw +45 deg: both upper arms head for the mid-plane
    cfg = m.full_config([0, 0, -PI / 4, -PI / 4, PI / 4, PI / 4])
    s = forward_kinematics(m, cfg)
    a1, a2 = s.of("arm1"), s.of("arm2")
    dmin = min(np.linalg.norm(p - q) for p in a1 for q in a2)
    assert dmin < 0.1  # radii sum
    assert inter_arm_collision(m, cfg)


@settings(max_examples=30, deadline=None)
@given(st.floats(-PI / 3, PI / 3), st.floats(-PI / 6, PI / 6))
def test_torso_motion_alone_keeps_wide_arms_apart(yaw, pitch):
    m = crossing_robot()
    assert not inter_arm_collision(m, m.full_config([yaw, pitch, PI / 2, 0, -PI / 2, 0]))


def test_inter_padding_inflates_each_sphere():
    m = crossing_robot()
    cfg = m.full_config([0, 0, PI / 2, 0, -PI / 2, 0])
    s = forward_kinematics(m, cfg)
    gap = min(np.linalg.norm(p - q) for p in s.of("arm1") for q in s.of("arm2")) - 0.1
    assert not inter_arm_collision(m, cfg, padding=gap / 2 - 1e-6)
    assert inter_arm_collision(m, cfg, padding=gap / 2 + 1e-6)


# -- voxel collision -------------------------------------------------------------------

def single_sphere_model():
    t = (joint((0, 0, 1), limits=(0, 0)),)
    a = (joint((0, 0, 1), limits=(0, 0)),)
    return RobotModel(torso=t, arm1=a, arm2=a, mount1=np.eye(4), mount2=np.eye(4),
                      arm1_spheres=(CollisionSphere(0, (0.013, -0.021, 0.4), 0.1),))


def test_voxel_collision_empty_sphere_model():
    t = (joint((0, 0, 1)),)
    m = RobotModel(torso=t, arm1=t, arm2=t, mount1=np.eye(4), mount2=np.eye(4))
    grid = VoxelGrid((-1, -1, 0), 0.06, (35, 35, 32))
    assert chain_voxel_collision(m, 1, m.chain_config(1, [0, 0]), grid) == set()


def test_voxel_collision_matches_brute_force():
    m = single_sphere_model()
    grid = VoxelGrid((-1.05, -1.05, 0.0), 0.06, (35, 35, 32))
    got = chain_voxel_collision(m, 1, m.chain_config(1, [0, 0]), grid)
    center = np.array([0.013, -0.021, 0.4])
    ids = np.arange(grid.count)
    d = np.linalg.norm(grid.centers(ids) - center, axis=1)
    want = set(ids[d < 0.1 + 0.06 * math.sqrt(3) / 2].tolist())
    assert got == want and len(want) > 0


def test_voxel_collision_monotone_in_padding():
    m = single_sphere_model()
    grid = VoxelGrid((-1.05, -1.05, 0.0), 0.06, (35, 35, 32))
    cfg = m.chain_config(1, [0, 0])
    assert chain_voxel_collision(m, 1, cfg, grid, 0.0) <= chain_voxel_collision(m, 1, cfg, grid, 0.06)


# -- the COL oracle -----------------------------------------------------------------------

def test_config_collision_conditions():
    m = crossing_robot()
    grid = VoxelGrid.from_workspace((-0.6, -0.6, 0.1), (0.6, 0.6, 0.7), 0.05)
    free = m.full_config([0, 0, PI / 2, 0, -PI / 2, 0])
    assert not config_collision(m, free, grid, OccupancySet.empty(grid))
    tip = forward_kinematics(m, free).of("arm1")[2]
    occ = OccupancySet.from_ids(grid, [voxel_of(grid, tip)])
    assert collision_conditions(m, free, grid, occ) == (4,)
    crossed = m.full_config([0, 0, -PI / 4, -PI / 4, PI / 4, PI / 4])
    assert collision_conditions(m, crossed, grid, OccupancySet.empty(grid)) == (1,)


def test_base_spheres_ignored_by_voxel_conditions():
    m = desk_robot()
    grid = VoxelGrid.from_workspace((-0.9, -0.9, 0.0), (0.9, 0.9, 1.5), 0.06)
    q = np.zeros(m.dof)
    q[[2, 5]] = -PI / 2  # both arms point up and clear of the pedestal
    occ = OccupancySet.from_ids(grid, [voxel_of(grid, (0, 0, 0.15))])
    assert 4 not in collision_conditions(m, m.full_config(q), grid, occ)


# -- JSON model I/O ---------------------------------------------------------------------------

@pytest.mark.parametrize("make", [planar_demo_robot, desk_robot, crossing_robot])
def test_robot_json_round_trip(make):
    m = make()
    m2 = robot_from_dict(robot_to_dict(m))
    assert robot_to_dict(m2) == robot_to_dict(m)
    q = np.mean(m.full_limits, axis=1)
    np.testing.assert_array_equal(forward_kinematics(m, m.full_config(q)).centers,
                                  forward_kinematics(m2, m2.full_config(q)).centers)


def test_robot_json_rejects_bad_version():
    d = robot_to_dict(planar_demo_robot())
    d["format_version"] = 99
    with pytest.raises(ModelError):
        robot_from_dict(d)
