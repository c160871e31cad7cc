import csv
import io
import json
import subprocess
import sys
from importlib import resources

import numpy as np
import pytest

from dualdrm import cli
from dualdrm.kinematics import forward_kinematics
from dualdrm.robots import planar_demo_robot
from dualdrm.scenario import Scenario, save_scenario
from dualdrm.voxel_world import OccupancySet, VoxelGrid, voxel_of

from instances import PI

ASSETS = resources.files("dualdrm") / "assets"
DEMO_GRID_FLAGS = ["--voxel-size", "0.1", "--workspace", "-0.6", "-0.6", "0.2", "0.6", "0.6", "0.8"]
DEMO_BUILD = ["build", "--robot", str(ASSETS / "demo_robot.json"), "--torso-step", "pi/12",
              "--arm-step", "pi/12", *DEMO_GRID_FLAGS]


def run(argv, capsys):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def error_of(err):
    return json.loads(err.strip().splitlines()[-1])


@pytest.fixture(scope="module")
def demo_drm(tmp_path_factory):
    p = tmp_path_factory.mktemp("build") / "demo.drm"
    assert cli.main(DEMO_BUILD + ["-o", str(p)]) == 0
    return p


def test_build_counts_match_hand_enumeration(tmp_path, capsys):
    # torso [-pi/6, pi/6] and each arm over a pi/2 range at pi/12: 5 x 7 lattice per chain.
    # edges: 5*6 along the arm, 4*7 along the torso, 2*4*6 diagonals
    code, out, _ = run(DEMO_BUILD + ["-o", tmp_path / "d.drm"], capsys)
    assert code == 0 and (tmp_path / "d.drm").stat().st_size > 48
    counts = dict(line.split("=") for line in out.split())
    assert counts["nodes_arm1"] == counts["nodes_arm2"] == "35"
    assert counts["edges_arm1"] == counts["edges_arm2"] == str(30 + 28 + 48)
    assert counts["torso_values"] == "5" and counts["inter_pairs"] == "0"


def test_build_usage_errors(tmp_path, capsys):
    code, _, _ = run(["build", "--robot", "builtin:planar-demo", "--arm-step", "0",
                      "-o", tmp_path / "x.drm"], capsys)
    assert code == cli.EXIT_USAGE
    code, _, err = run(["build", "--robot", "builtin:nope", "-o", tmp_path / "x.drm"], capsys)
    assert code == cli.EXIT_USAGE and error_of(err)["exit_code"] == 2
    code, _, err = run(DEMO_BUILD + ["--joint-ranges", "bogus=0:1", "-o", tmp_path / "x.drm"],
                       capsys)
    assert code == cli.EXIT_USAGE
    assert not (tmp_path / "x.drm").exists()


def test_build_node_cap(tmp_path, capsys):
    code, _, err = run(DEMO_BUILD + ["--node-cap", "20", "-o", tmp_path / "x.drm"], capsys)
    assert code == cli.EXIT_NODE_CAP
    e = error_of(err)
    assert e["error"] == "NodeCapExceeded" and "20" in e["message"]


def test_build_missing_robot_file(tmp_path, capsys):
    code, _, err = run(["build", "--robot", tmp_path / "none.json", "-o", tmp_path / "x.drm"],
                       capsys)
    assert code == cli.EXIT_IO


def test_joint_range_override(tmp_path, capsys):
    code, out, _ = run(DEMO_BUILD + ["--joint-ranges", "left_yaw=0:pi/4", "-o", tmp_path / "r.drm"],
                       capsys)
    counts = dict(line.split("=") for line in out.split())
    assert code == 0 and counts["nodes_arm1"] == "20" and counts["nodes_arm2"] == "35"


def test_parse_number():
    assert cli.parse_number("pi/6") == pytest.approx(PI / 6)
    assert cli.parse_number("-2*pi/3") == pytest.approx(-2 * PI / 3)
    assert cli.parse_number("0.25") == 0.25
    for bad in ("__import__('os')", "pi/0", "x"):
        with pytest.raises(Exception):
            cli.parse_number(bad)


# -- plan / check -------------------------------------------------------------------------------

def test_plan_then_check(demo_drm, tmp_path, capsys):
    traj = tmp_path / "t.json"
    code, out, _ = run(["plan", demo_drm, ASSETS / "demo_scenario.json", "-o", traj], capsys)
    assert code == 0 and out.startswith("planner=dual")
    code, out, _ = run(["check", traj, ASSETS / "demo_scenario.json"], capsys)
    assert code == 0 and out.startswith("ok")


@pytest.mark.parametrize("planner", ["leader-follower", "product-oracle"])
def test_plan_other_planners(demo_drm, tmp_path, capsys, planner):
    traj = tmp_path / "t.json"
    code, _, _ = run(["plan", demo_drm, ASSETS / "demo_scenario.json", "--planner", planner,
                      "-o", traj], capsys)
    assert code == 0 and json.loads(traj.read_text())["planner"] == planner
    assert run(["check", traj, ASSETS / "demo_scenario.json"], capsys)[0] == 0


def test_plan_grid_mismatch(demo_drm, tmp_path, capsys):
    sc = json.loads((ASSETS / "demo_scenario.json").read_text())
    sc["grid"]["voxel_size"] = 0.05
    sc["grid"]["dims"] = [24, 24, 12]
    sc["occupied"] = []
    (tmp_path / "s.json").write_text(json.dumps(sc))
    code, _, err = run(["plan", demo_drm, tmp_path / "s.json", "-o", tmp_path / "t.json"], capsys)
    assert code == cli.EXIT_COMPAT
    e = error_of(err)
    assert e["error"] == "CompatibilityMismatch" and "voxel_size" in e["message"]


def test_product_oracle_over_budget(demo_drm, tmp_path, capsys):
    code, _, err = run(["plan", demo_drm, ASSETS / "demo_scenario.json", "--planner",
                        "product-oracle", "--pair-budget", "10", "-o", tmp_path / "t.json"], capsys)
    assert code == cli.EXIT_BUDGET and error_of(err)["error"] == "BudgetExceeded"


def test_plan_endpoint_in_collision(demo_drm, tmp_path, capsys):
    model = planar_demo_robot()
    grid = VoxelGrid.from_workspace((-0.6, -0.6, 0.2), (0.6, 0.6, 0.8), 0.1)
    q = np.array([0.0, PI / 4, -PI / 4])
    tip = forward_kinematics(model, model.full_config(q)).of("arm1")[-1]
    occ = OccupancySet.from_ids(grid, [voxel_of(grid, tip)])
    save_scenario(Scenario("bad", grid, occ, q, np.zeros(3)), tmp_path / "s.json")
    code, _, err = run(["plan", demo_drm, tmp_path / "s.json", "-o", tmp_path / "t.json"], capsys)
    assert code == cli.EXIT_ENDPOINT and error_of(err)["error"] == "StartInCollision"


def test_plan_unreadable_roadmap(tmp_path, capsys):
    (tmp_path / "junk.drm").write_bytes(b"not a roadmap at all" * 4)
    code, _, err = run(["plan", tmp_path / "junk.drm", ASSETS / "demo_scenario.json",
                        "-o", tmp_path / "t.json"], capsys)
    assert code == cli.EXIT_IO and error_of(err)["error"] == "MagicError"


def test_check_reports_hand_edited_violation(demo_drm, tmp_path, capsys):
    """A waypoint moved onto an occupied voxel is reported as a voxel condition for arm 1."""
    model = planar_demo_robot()
    grid = VoxelGrid.from_workspace((-0.6, -0.6, 0.2), (0.6, 0.6, 0.8), 0.1)
    bad = np.array([0.0, PI / 4, -PI / 4])
    tip = forward_kinematics(model, model.full_config(bad)).of("arm1")[-1]
    occ = OccupancySet.from_ids(grid, [voxel_of(grid, tip)])
    # both endpoints keep arm 1 on the near side of the voxel
    start, target = np.array([-PI / 6, 0.0, 0.0]), np.array([0.0, 0.0, -PI / 2])
    save_scenario(Scenario("edit", grid, occ, start, target), tmp_path / "s.json")
    traj = tmp_path / "t.json"
    assert run(["plan", demo_drm, tmp_path / "s.json", "-o", traj], capsys)[0] == 0
    assert run(["check", traj, tmp_path / "s.json"], capsys)[0] == 0
    d = json.loads(traj.read_text())
    d["waypoints"] = [d["waypoints"][0], bad.tolist(), d["waypoints"][-1]]
    traj.write_text(json.dumps(d))
    code, out, _ = run(["check", traj, tmp_path / "s.json"], capsys)
    assert code == cli.EXIT_VIOLATION
    assert out.startswith("violation: segment 0") and "condition 4" in out


def test_check_format_errors(demo_drm, tmp_path, capsys):
    traj = tmp_path / "t.json"
    assert run(["plan", demo_drm, ASSETS / "demo_scenario.json", "-o", traj], capsys)[0] == 0
    d = json.loads(traj.read_text())
    d["waypoints"] = []
    traj.write_text(json.dumps(d))
    code, _, err = run(["check", traj, ASSETS / "demo_scenario.json"], capsys)
    assert code == cli.EXIT_IO and error_of(err)["error"] == "FormatError"
    traj.write_text("{not json")
    assert run(["check", traj, ASSETS / "demo_scenario.json"], capsys)[0] == cli.EXIT_IO
    d["waypoints"] = [[0.0, 0.0]]
    traj.write_text(json.dumps(d))
    assert run(["check", traj, ASSETS / "demo_scenario.json"], capsys)[0] == cli.EXIT_IO
    d["waypoints"] = [[0.0, 3.0, 0.0]]
    traj.write_text(json.dumps(d))
    code, out, _ = run(["check", traj, ASSETS / "demo_scenario.json"], capsys)
    assert code == cli.EXIT_VIOLATION and "joint limits" in out


# -- gen / bench --------------------------------------------------------------------------------

GEN = ["gen", "--robot", "builtin:planar-demo", *DEMO_GRID_FLAGS, "--seed", "7", "--count", "3"]


@pytest.fixture(scope="module")
def scen_dir(tmp_path_factory):
    p = tmp_path_factory.mktemp("scen")
    assert cli.main(GEN + ["-o", str(p)]) == 0
    return p


def test_gen_is_deterministic(scen_dir, tmp_path, capsys):
    assert run(GEN + ["-o", tmp_path], capsys)[0] == 0
    names = sorted(p.name for p in scen_dir.glob("*.json"))
    assert names == ["shelf-7-0000.json", "shelf-7-0001.json", "shelf-7-0002.json"]
    for n in names:
        assert (tmp_path / n).read_bytes() == (scen_dir / n).read_bytes()
    sc = json.loads((scen_dir / names[0]).read_text())
    assert sc["generator"]["seed"] == 7 and len(sc["occupied"]) > 0
    assert run(["gen", "--robot", "builtin:planar-demo", "--count", "0", "-o", tmp_path],
               capsys)[0] == cli.EXIT_USAGE


def read_rows(path):
    return list(csv.DictReader(io.StringIO(path.read_text())))


def test_bench_rows_and_aggregates(demo_drm, scen_dir, tmp_path, capsys):
    out = tmp_path / "r.csv"
    code, text, _ = run(["bench", demo_drm, scen_dir, "-o", out], capsys)
    assert code == 0 and "planner=dual success=" in text
    rows = read_rows(out)
    per = [r for r in rows if r["record"] == "row"]
    agg = [r for r in rows if r["record"] == "aggregate"]
    assert len(per) == 6 and len(agg) == 2
    assert [r["scenario_id"] for r in per] == sorted(r["scenario_id"] for r in per)
    for a in agg:
        mine = [r for r in per if r["planner"] == a["planner"]]
        ok = sum(r["success"] == "1" for r in mine)
        assert int(a["n_success"]) == ok and int(a["n_total"]) == 3
        assert float(a["success_rate"]) == pytest.approx(ok / 3)
    assert (tmp_path / "r_hist.csv").exists() and (tmp_path / "r.png").stat().st_size > 0


def test_bench_is_byte_identical_without_timing(demo_drm, scen_dir, tmp_path, capsys):
    for name in ("a.csv", "b.csv"):
        assert run(["bench", demo_drm, scen_dir, "--seed", "3", "--omit-timing", "--no-figure",
                    "-o", tmp_path / name], capsys)[0] == 0
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert all(r["time_s"] == "" for r in read_rows(tmp_path / "a.csv"))
    assert not (tmp_path / "a.png").exists()


def test_bench_records_failures_as_rows(demo_drm, scen_dir, tmp_path, capsys):
    out = tmp_path / "r.csv"
    code, _, _ = run(["bench", demo_drm, scen_dir, "--planners", "product-oracle",
                      "--pair-budget", "10", "--no-figure", "-o", out], capsys)
    assert code == 0
    per = [r for r in read_rows(out) if r["record"] == "row"]
    assert len(per) == 3 and all(r["failure_kind"] == "BudgetExceeded" for r in per)


def test_bench_usage_errors(demo_drm, scen_dir, tmp_path, capsys, monkeypatch):
    assert run(["bench", demo_drm, scen_dir, "--planners", "astar", "-o", tmp_path / "r.csv"],
               capsys)[0] == cli.EXIT_USAGE
    assert run(["bench", demo_drm, tmp_path, "-o", tmp_path / "r.csv"], capsys)[0] == cli.EXIT_USAGE
    monkeypatch.setenv("DUALDRM_THREADS", "many")
    assert run(["bench", demo_drm, scen_dir, "-o", tmp_path / "r.csv"], capsys)[0] == cli.EXIT_USAGE


def test_bench_threads_do_not_change_results(demo_drm, scen_dir, tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("DUALDRM_THREADS", "3")
    assert run(["bench", demo_drm, scen_dir, "--omit-timing", "--no-figure",
                "-o", tmp_path / "p.csv"], capsys)[0] == 0
    monkeypatch.setenv("DUALDRM_THREADS", "1")
    assert run(["bench", demo_drm, scen_dir, "--omit-timing", "--no-figure",
                "-o", tmp_path / "s.csv"], capsys)[0] == 0
    assert (tmp_path / "p.csv").read_bytes() == (tmp_path / "s.csv").read_bytes()


def test_console_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "dualdrm", "build", "--robot", "builtin:planar-demo",
                          "--torso-step", "-1", "-o", str(tmp_path / "x.drm")],
                         capture_output=True, text=True)
    assert res.returncode == 2 and "must be > 0" in res.stderr
