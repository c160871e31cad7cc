import numpy as np
import pytest

from dualdrm.baselines import product_oracle_plan
from dualdrm.dual_search import EXHAUSTIVE, RESTRICTED
from dualdrm.errors import (BudgetExceeded, GridMismatchError, InputError, NoConnectableNode,
                            NoPath, PlanningFailure, StartInCollision, TargetInCollision)
from dualdrm.kinematics import forward_kinematics
from dualdrm.planner import (PlanOptions, PlanRequest, SegmentChecker, connect_endpoint, plan,
                             segment_fractions, shortcut, trajectory_cost, validate_trajectory)
from dualdrm.scenario import sample_free_config
from dualdrm.voxel_world import OccupancySet, VoxelGrid, voxel_of

from instances import PI, crossing_grid, planar_arm, random_boxes, small_crossing_dual


@pytest.fixture(scope="module")
def crossing():
    return small_crossing_dual(torso_joints=1, torso_step=PI / 6, arm_step=PI / 4)


def request(model, start, target, occ, **opts):
    return PlanRequest(model.full_config(start), model.full_config(target), occ,
                       PlanOptions(**opts))


def weighted_distance(d, a, b):
    w = np.asarray(d.r1.meta.get("full_weights", np.ones(len(a))), float)
    return float(np.linalg.norm((np.asarray(b) - np.asarray(a)) * w))


def assert_endpoints_exact(traj, start, target):
    np.testing.assert_array_equal(traj.waypoints[0].vector, start)
    np.testing.assert_array_equal(traj.waypoints[-1].vector, target)


def test_segment_fractions():
    np.testing.assert_allclose(segment_fractions([0, 0], [0.1, 0.03], 0.05), [0, 0.5, 1])
    assert len(segment_fractions([0], [0], 0.01)) == 2
    assert len(segment_fractions([0], [0.0999], 0.01)) == 11


def test_start_equals_target(crossing):
    d, model, grid = crossing
    q = np.zeros(model.dof)
    traj = plan(d, model, request(model, q, q, OccupancySet.empty(grid)))
    assert len(traj.waypoints) == 1 and traj.cost == 0.0


def test_free_space_single_arm_move(crossing):
    d, model, grid = crossing
    start = np.array([0.0, PI / 2, 0.0, 0.0, 0.0])
    target = np.array([0.0, 0.0, -PI / 4, 0.0, 0.0])
    occ = OccupancySet.empty(grid)
    traj = plan(d, model, request(model, start, target, occ))
    assert_endpoints_exact(traj, start, target)
    assert validate_trajectory(model, traj.waypoints, occ) is None
    assert traj.cost >= weighted_distance(d, start, target) - 1e-12
    assert traj.cost == pytest.approx(trajectory_cost(traj.waypoints, np.ones(model.dof)))


def test_off_grid_endpoints(crossing):
    """Endpoints half a step away from every lattice value still connect exactly."""
    d, model, grid = crossing
    start = np.array([PI / 12, PI / 8, PI / 8, -PI / 8, -3 * PI / 8])
    target = np.array([-PI / 12, 3 * PI / 8, -PI / 8, PI / 8, PI / 8])
    occ = OccupancySet.empty(grid)
    traj = plan(d, model, request(model, start, target, occ))
    assert_endpoints_exact(traj, start, target)
    assert validate_trajectory(model, traj.waypoints, occ) is None


def test_plans_are_deterministic(crossing):
    d, model, grid = crossing
    rng = np.random.default_rng(4)
    occ = random_boxes(grid, rng, 4)
    s = sample_free_config(model, grid, occ, rng, 0.0, 5000)
    t = sample_free_config(model, grid, occ, rng, 0.0, 5000)
    a = plan(d, model, request(model, s, t, occ))
    b = plan(d, model, request(model, s, t, occ))
    np.testing.assert_array_equal(a.vectors(), b.vectors())


def test_plans_agree_with_product_oracle(crossing):
    """Every returned trajectory passes the dense check; outcomes match the oracle pipeline."""
    d, model, grid = crossing
    rng = np.random.default_rng(3)
    outcomes = []
    for _ in range(12):
        occ = random_boxes(grid, rng, int(rng.integers(1, 8)))
        s = sample_free_config(model, grid, occ, rng, 0.0, 5000)
        t = sample_free_config(model, grid, occ, rng, 0.0, 5000)
        req = request(model, s, t, occ)
        row = []
        for fn in (plan, product_oracle_plan):
            try:
                traj = fn(d, model, req)
            except PlanningFailure as exc:
                row.append(type(exc).__name__)
                continue
            assert validate_trajectory(model, traj.waypoints, occ) is None
            assert_endpoints_exact(traj, s, t)
            row.append("ok")
        outcomes.append(tuple(row))
    assert all(a == b for a, b in outcomes)
    assert sum(a == "ok" for a, _ in outcomes) >= 6


@pytest.mark.parametrize("policy", [RESTRICTED, EXHAUSTIVE])
def test_fixed_search_policies(crossing, policy):
    d, model, grid = crossing
    rng = np.random.default_rng(8)
    occ = random_boxes(grid, rng, 3)
    s = sample_free_config(model, grid, occ, rng, 0.0, 5000)
    t = sample_free_config(model, grid, occ, rng, 0.0, 5000)
    try:
        traj = plan(d, model, request(model, s, t, occ, search_policy=policy))
    except NoPath:
        pytest.skip("instance infeasible on this roadmap")
    assert validate_trajectory(model, traj.waypoints, occ) is None


# -- endpoint failures ------------------------------------------------------------------------

def occupancy_at_arm1_tip(model, grid, q):
    tip = forward_kinematics(model, model.full_config(q)).of("arm1")[-1]
    return OccupancySet.from_ids(grid, [voxel_of(grid, tip)])


def test_endpoint_in_collision(crossing):
    d, model, grid = crossing
    q = np.array([0.0, PI / 4, 0.0, 0.0, 0.0])
    free = np.zeros(model.dof)
    occ = occupancy_at_arm1_tip(model, grid, q)
    with pytest.raises(StartInCollision, match="condition 4"):
        plan(d, model, request(model, q, free, occ))
    with pytest.raises(TargetInCollision):
        plan(d, model, request(model, free, q, occ))
    with pytest.raises(InputError):
        plan(d, model, request(model, free, np.full(model.dof, 3.0), OccupancySet.empty(grid)))


def test_no_connectable_node(crossing):
    d, model, grid = crossing
    m1, m2 = d.r1.new_mask(), d.r2.new_mask()
    m1.invalidate(np.arange(d.r1.node_count))
    checker = SegmentChecker(model, OccupancySet.empty(grid), 0.01)
    with pytest.raises(NoConnectableNode):
        connect_endpoint(d, m1, m2, model.full_config(np.zeros(model.dof)), checker)


def test_grid_mismatch(crossing):
    d, model, _ = crossing
    q = np.zeros(model.dof)
    with pytest.raises(GridMismatchError):
        plan(d, model, request(model, q, q, OccupancySet.empty(crossing_grid(0.1))))


def test_time_budget(crossing):
    d, model, grid = crossing
    start = np.array([-PI / 3, PI / 2, 0.0, 0.0, 0.0])
    target = np.array([PI / 3, 0.0, -PI / 4, -PI / 2, 0.0])
    with pytest.raises(BudgetExceeded):
        plan(d, model, request(model, start, target, OccupancySet.empty(grid), time_budget=1e-9))


def test_bad_options():
    with pytest.raises(InputError):
        PlanOptions(resolution=0)
    with pytest.raises(InputError):
        PlanOptions(search_policy="dfs")
    with pytest.raises(InputError):
        PlanOptions(max_iterations=0)


# -- validation and shortcutting on the unit planar arm ------------------------------------------

PLANAR_GRID = VoxelGrid((-2.5, -2.5, -0.5), 0.1, (50, 50, 10))


def planar_obstacle():
    """One voxel where the tip passes when both joints sweep together from 0 to pi/2."""
    tip = np.array([2 * np.cos(PI / 4), 2 * np.sin(PI / 4), 0.0])
    return OccupancySet.from_ids(PLANAR_GRID, [voxel_of(PLANAR_GRID, tip)])


def planar(j1, j2):
    return np.array([0.0, j1, j2, 0.0, 0.0])


def test_validate_single_waypoint():
    m = planar_arm()
    occ = planar_obstacle()
    assert validate_trajectory(m, [planar(0, 0)], occ) is None
    v = validate_trajectory(m, [planar(PI / 4, 0)], occ)
    assert v.segment == 0 and v.sample == 0 and v.conditions == (4,)
    with pytest.raises(InputError):
        validate_trajectory(m, [], occ)


def test_validate_catches_voxel_between_free_endpoints():
    m = planar_arm()
    occ = planar_obstacle()
    a, c = planar(0, 0), planar(PI / 2, 0)
    assert validate_trajectory(m, [a], occ) is None and validate_trajectory(m, [c], occ) is None
    v = validate_trajectory(m, [a, c], occ)
    assert v.conditions == (4,) and 0.3 < v.fraction < 0.7


def test_validate_catches_arms_meeting_mid_edge(crossing):
    _, model, grid = crossing
    a = np.array([0.0, 0.355, 1.186, 0.013, -0.38])
    b = np.array([0.0, -0.607, 0.191, 0.928, -0.185])
    occ = OccupancySet.empty(grid)
    assert validate_trajectory(model, [a], occ) is None
    assert validate_trajectory(model, [b], occ) is None
    v = validate_trajectory(model, [a, b], occ)
    assert v.conditions == (1,) and 0 < v.fraction < 1


def test_shortcut_collinear_collapses():
    m = planar_arm()
    occ = OccupancySet.empty(PLANAR_GRID)
    pts = [planar(0, 0), planar(0.2, 0.1), planar(0.4, 0.2), planar(0.6, 0.3)]
    out = shortcut(m, pts, occ, 0.01)
    assert len(out) == 2
    np.testing.assert_array_equal(out[0], pts[0])
    np.testing.assert_array_equal(out[-1], pts[-1])


def test_shortcut_straightens_free_detour():
    m = planar_arm()
    occ = OccupancySet.empty(PLANAR_GRID)
    pts = [planar(0, 0), planar(0, PI), planar(PI / 2, PI), planar(PI / 2, 0)]
    out = shortcut(m, pts, occ, 0.01)
    assert len(out) == 2
    w = np.ones(5)
    assert trajectory_cost(out, w) < trajectory_cost(pts, w)


def test_shortcut_keeps_needed_detour():
    m = planar_arm()
    occ = planar_obstacle()
    # folding the arm keeps the tip on the y axis, clear of the obstacle
    pts = [planar(0, 0), planar(0, PI), planar(PI / 2, 0)]
    assert validate_trajectory(m, pts, occ) is None
    out = shortcut(m, pts, occ, 0.01)
    assert len(out) == 3 and all(np.array_equal(x, y) for x, y in zip(out, pts))


def test_shortcut_partial():
    m = planar_arm()
    occ = planar_obstacle()
    pts = [planar(0, 0), planar(0, PI), planar(PI / 2, PI), planar(PI / 2, 0)]
    assert validate_trajectory(m, pts, occ) is None
    out = shortcut(m, pts, occ, 0.01)
    assert validate_trajectory(m, out, occ) is None
    assert validate_trajectory(m, [pts[0], pts[-1]], occ) is not None
    assert 2 < len(out) < len(pts)
    w = np.ones(5)
    assert trajectory_cost(out, w) <= trajectory_cost(pts, w)
