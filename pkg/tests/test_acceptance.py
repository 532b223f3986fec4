"""Acceptance suite: one test per acceptance criterion, each printing a
pass line with its runtime (run with ``pytest -v -s tests/test_acceptance.py``
to see them)."""

import itertools
import json
import math
import time

import numpy as np
import pytest

from synth import empty_scene, make_state, make_traj, path_traj, stick_model

from armcheck.cli import main as cli_main
from armcheck.critics import (
    CriticConfig,
    CriticReport,
    Flag,
    Measurement,
    critic_collision,
    critic_ee_pose,
    critic_joint_speed,
    critic_pinch_point,
    registered_critics,
    run_critics,
    score_index,
)
from armcheck.fixtures import fixture_path, fixture_text
from armcheck.geometry import Vec3, aabb_distance, aabb_of_points, convex_hull, hull_volume
from armcheck.kinematics import (
    UnreachableError,
    forward_kinematics,
    jacobian,
    load_model_file,
    solve_ik,
)
from armcheck.program import InterpreterConfig, interpret, parse_program
from armcheck.refine import MemoryStore, MockAdapter, Termination, fix_loop
from armcheck.scene import load_scene
from armcheck.service import DeployRefusedError, MockRobot, deploy_trajectory

ARM = load_model_file(fixture_path("default_model.json"))


def _pass(name: str, started: float, budget: float):
    elapsed = time.monotonic() - started
    assert elapsed < budget, f"{name} took {elapsed:.1f}s, budget {budget}s"
    print(f"ACCEPTANCE {name}: PASS ({elapsed:.2f}s)")


# ---------------------------------------------------------------------------
# 1. Algorithm oracle equivalence


def _brute_force_speed_flag(traj, v_warn, v_max):
    """Naive per-step, per-link reimplementation (the independent oracle)."""
    flag = "OK"
    states = traj.states
    for t in range(1, len(states)):
        dt = (states[t].t_ms - states[t - 1].t_ms) / 1000
        for link in states[t].frames:
            p0 = states[t - 1].frames[link].position
            p1 = states[t].frames[link].position
            v = math.sqrt((p1.x - p0.x) ** 2 + (p1.y - p0.y) ** 2 + (p1.z - p0.z) ** 2) / dt
            if v > v_max:
                return "Error"
            if v > v_warn:
                flag = "Warning"
    return flag


def test_algorithm_oracle_equivalence():
    started = time.monotonic()
    rng = np.random.default_rng(2024)
    scene = empty_scene()
    model = stick_model()
    disagreements = 0
    for _ in range(1000):
        n_states = int(rng.integers(10, 201))
        n_links = int(rng.integers(1, 4))
        links = [f"l{i}" for i in range(n_links)]
        v_warn = float(rng.uniform(0.5, 1.5))
        v_max = v_warn + float(rng.uniform(0.1, 2.0))
        dt_choices = rng.integers(50, 200, size=n_states - 1)
        # random-walk positions with steps that straddle both thresholds
        t = 0
        states = []
        pos = rng.uniform(-1, 1, size=(n_links, 3))
        states.append(make_state(0, {l: tuple(pos[i]) for i, l in enumerate(links)}))
        for k in range(n_states - 1):
            t += int(dt_choices[k])
            step_scale = rng.uniform(0, v_warn * 2.2) * (dt_choices[k] / 1000)
            direction = rng.normal(size=(n_links, 3))
            direction /= np.linalg.norm(direction, axis=1, keepdims=True)
            pos = pos + direction * step_scale
            states.append(make_state(t, {l: tuple(pos[i]) for i, l in enumerate(links)}))
        traj = make_traj(states)
        cfg = CriticConfig(v_warn=v_warn, v_max=v_max)
        got = critic_joint_speed(traj, scene, model, cfg).flag.value
        want = _brute_force_speed_flag(traj, v_warn, v_max)
        if got != want:
            disagreements += 1
    assert disagreements == 0
    _pass("algorithm-oracle-equivalence", started, 5.0)


# ---------------------------------------------------------------------------
# 2. Score index exactness


def _mk_report(name, flag):
    return CriticReport(
        critic=name,
        flag=flag,
        explanation="x" if flag is not Flag.OK else "",
        fix_hint="y" if flag is not Flag.OK else "",
        measurement=Measurement(0.0, "m", 0) if flag is not Flag.OK else None,
        thresholds={},
    )


def test_score_index_exactness():
    started = time.monotonic()
    names = registered_critics()
    combos = 0
    for combo in itertools.product([Flag.OK, Flag.WARNING, Flag.ERROR], repeat=5):
        total = score_index([_mk_report(n, f) for n, f in zip(names, combo)]).total
        ok = sum(1 for f in combo if f is Flag.OK)
        warn = sum(1 for f in combo if f is Flag.WARNING)
        assert total == 2 * ok + warn
        combos += 1
    assert combos == 243
    assert score_index([_mk_report(n, Flag.OK) for n in names]).total == 10
    assert score_index([_mk_report(n, Flag.ERROR) for n in names]).total == 0
    _pass("score-index-exactness", started, 1.0)


# ---------------------------------------------------------------------------
# 3. Threshold boundary semantics


def _one_step_traj(dist, dt_ms=100):
    return path_traj([(0.0, 0.0, 0.0), (dist, 0.0, 0.0)], dt_ms=dt_ms)


def _pinch_traj(d):
    return make_traj([make_state(0, {"ee": (0, 0, 0)}, proximity={("a", "b"): d})])


def test_threshold_boundary_semantics():
    started = time.monotonic()
    cfg = CriticConfig()
    scene = empty_scene()
    model = stick_model()
    dt = 0.1  # the 100 ms step in seconds

    # joint speed uses strict `>`
    assert critic_joint_speed(_one_step_traj(cfg.v_warn * dt), scene, model, cfg).flag is Flag.OK
    assert critic_joint_speed(_one_step_traj(cfg.v_max * dt), scene, model, cfg).flag is Flag.WARNING
    assert critic_joint_speed(_one_step_traj(cfg.v_max * dt * 1.001), scene, model, cfg).flag is Flag.ERROR

    # ee pose uses `>=` (motion along the finger axis, cos = 1 exactly)
    assert critic_ee_pose(_one_step_traj(cfg.score_warn * dt), scene, model, cfg).flag is Flag.WARNING
    assert critic_ee_pose(_one_step_traj(cfg.score_err * dt), scene, model, cfg).flag is Flag.ERROR
    assert critic_ee_pose(_one_step_traj(cfg.score_warn * dt * 0.999), scene, model, cfg).flag is Flag.OK

    # pinch: d >= d_max is OK; d_min <= d < d_max warns; d < d_min errors
    assert critic_pinch_point(_pinch_traj(cfg.d_max), scene, model, cfg).flag is Flag.OK
    assert critic_pinch_point(_pinch_traj(cfg.d_min), scene, model, cfg).flag is Flag.WARNING
    assert critic_pinch_point(_pinch_traj(cfg.d_min * 0.999), scene, model, cfg).flag is Flag.ERROR

    _pass("threshold-boundary-semantics", started, 1.0)


# ---------------------------------------------------------------------------
# 4. Geometry accuracy


def test_geometry_accuracy():
    started = time.monotonic()

    # unit cube volume to 1e-9
    cube = [Vec3(x, y, z) for x in (0, 1) for y in (0, 1) for z in (0, 1)]
    assert abs(hull_volume(convex_hull(cube)) - 1.0) < 1e-9

    # hull of 500 random points vs a 1e6-sample Monte-Carlo membership oracle
    rng = np.random.default_rng(77)
    cloud = rng.uniform([0, 0, 0], [2, 1, 1], size=(500, 3))
    h = convex_hull([Vec3.from_array(p) for p in cloud])
    normals, offsets = [], []
    for i, j, k in h.facets:
        a, b, c = h.vertices[i], h.vertices[j], h.vertices[k]
        n = (b - a).cross(c - a).as_array()
        normals.append(n)
        offsets.append(float(np.dot(n, a.as_array())))
    normals = np.array(normals)
    offsets = np.array(offsets)
    samples = rng.uniform([0, 0, 0], [2, 1, 1], size=(1_000_000, 3))
    inside = np.all(samples @ normals.T <= offsets[None, :] + 1e-12, axis=1)
    mc_volume = inside.mean() * 2.0
    assert hull_volume(h) == pytest.approx(mc_volume, rel=0.02)

    # aabb_distance symmetry over 10,000 random pairs
    pts = rng.uniform(-5, 5, size=(10_000, 12))
    for row in pts:
        a = aabb_of_points([Vec3(*row[0:3]), Vec3(*row[3:6])])
        b = aabb_of_points([Vec3(*row[6:9]), Vec3(*row[9:12])])
        assert aabb_distance(a, b) == aabb_distance(b, a)

    _pass("geometry-accuracy", started, 30.0)


# ---------------------------------------------------------------------------
# 5. Kinematics accuracy


def test_kinematics_accuracy():
    started = time.monotonic()
    rng = np.random.default_rng(11)

    # Jacobian vs central finite differences, h = 1e-6
    h = 1e-6
    for _ in range(100):
        q = rng.uniform(-math.pi, math.pi, ARM.dof)
        J = jacobian(ARM, q)
        J_fd = np.zeros_like(J)
        for j in range(ARM.dof):
            qp, qm = q.copy(), q.copy()
            qp[j] += h
            qm[j] -= h
            fp = forward_kinematics(ARM, qp)[ARM.ee_link]
            fm = forward_kinematics(ARM, qm)[ARM.ee_link]
            J_fd[:3, j] = (fp.position.as_array() - fm.position.as_array()) / (2 * h)
            drot = fp.orientation.to_matrix() @ fm.orientation.to_matrix().T
            angle = math.acos(max(-1.0, min(1.0, (np.trace(drot) - 1) / 2)))
            if angle > 1e-12:
                axis = np.array(
                    [drot[2, 1] - drot[1, 2], drot[0, 2] - drot[2, 0], drot[1, 0] - drot[0, 1]]
                ) / (2 * math.sin(angle))
                J_fd[3:, j] = axis * angle / (2 * h)
        rel = np.linalg.norm(J - J_fd) / max(1.0, np.linalg.norm(J))
        assert rel < 1e-4

    # IK round trip on 100 reachable targets sampled as FK(random q)
    for _ in range(100):
        q = rng.uniform(-math.pi, math.pi, ARM.dof)
        target = forward_kinematics(ARM, q)[ARM.ee_link].position
        solved = solve_ik(ARM, target, None, np.zeros(ARM.dof))
        reached = forward_kinematics(ARM, solved)[ARM.ee_link].position
        assert (reached - target).norm() < 1e-3

    # Unreachable for 20 beyond-reach targets
    bound = ARM.reach_bound()
    for _ in range(20):
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        target = Vec3.from_array(direction * (bound * rng.uniform(1.05, 3.0)))
        with pytest.raises(UnreachableError):
            solve_ik(ARM, target, None, np.zeros(ARM.dof))

    _pass("kinematics-accuracy", started, 10.0)


# ---------------------------------------------------------------------------
# 6. Fix-loop protocol


FAST_CFG = InterpreterConfig(omega_nom=2.5)


def test_fix_loop_protocol():
    started = time.monotonic()
    scene = load_scene(fixture_text("scenes/recycling.json"))
    task = "clear the table into the trash bin"

    def run_improving():
        adapter = MockAdapter.from_script(fixture_path("scripts/improving.json"))
        return fix_loop(task, scene, ARM, adapter, memory=MemoryStore(), interp_cfg=FAST_CFG)

    result = run_improving()
    assert result.attempt_count <= 5
    scores = [a.score for a in result.attempts]
    assert all(s is not None for s in scores)
    assert scores == sorted(scores)
    assert result.termination is Termination.ALL_OK

    # determinism: an identical run agrees exactly
    again = run_improving()
    assert [a.program for a in again.attempts] == [a.program for a in result.attempts]
    assert [a.score for a in again.attempts] == scores

    stagnant = MockAdapter.from_script(fixture_path("scripts/stagnant.json"))
    result2 = fix_loop(task, scene, ARM, stagnant, memory=MemoryStore(), interp_cfg=FAST_CFG)
    assert result2.termination is Termination.UNCHANGED
    assert result2.attempt_count == 2

    _pass("fix-loop-protocol", started, 5.0)


# ---------------------------------------------------------------------------
# 7. Ablation analogue


def test_ablation_analogue(capsys):
    started = time.monotonic()
    code = cli_main(["ablate", "--manifest", str(fixture_path("ablation_manifest.json")), "--format", "json"])
    captured = capsys.readouterr()
    assert code == 0
    body = json.loads(captured.out)
    assert len(body["tasks"]) == 3
    undetected_total = 0
    for row in body["tasks"]:
        assert row["external"]["score"] >= row["embedded"]["score"], row["task"]
        undetected = [c for c, f in row["embedded"]["flags"].items() if f != "OK"]
        undetected_total += len(undetected)
    assert undetected_total >= 1  # the embedded mode missed seeded violations
    with capsys.disabled():
        _pass("ablation-analogue", started, 30.0)


# ---------------------------------------------------------------------------
# 8. Deployment safety gate


def test_deployment_safety_gate(tmp_path):
    started = time.monotonic()
    rng = np.random.default_rng(5)
    scene = empty_scene()
    model = stick_model()
    cfg = CriticConfig()
    log = tmp_path / "robot.jsonl"
    robot = MockRobot(log_path=log, dof=1)
    robot.start()
    transmitted = 0
    refused = 0
    try:
        for i in range(50):
            seeded_error = i % 2 == 0
            n = int(rng.integers(10, 60))
            t = 0
            pos = np.array([0.0, 0.0, 0.0])
            states = [make_state(0, {"ee": tuple(pos)})]
            for _ in range(n - 1):
                t += 50
                step = rng.uniform(0.0, 0.03)  # <= 0.6 m/s at 50 ms: safely OK
                direction = rng.normal(size=3)
                pos = pos + direction / np.linalg.norm(direction) * step
                states.append(make_state(t, {"ee": tuple(pos)}))
            if seeded_error:
                t += 50
                pos = pos + np.array([cfg.v_max * 0.05 * 3.0, 0, 0])  # 3x the cap
                states.append(make_state(t, {"ee": tuple(pos)}))
            traj = make_traj(states)
            reports = run_critics(traj, scene, model, cfg)
            has_error = any(r.flag is Flag.ERROR for r in reports)
            assert has_error == seeded_error
            if has_error:
                with pytest.raises(DeployRefusedError):
                    deploy_trajectory(traj, reports, robot.address)
                refused += 1
            else:
                sent = deploy_trajectory(traj, reports, robot.address)
                assert sent == len(traj.states)
                transmitted += 1
    finally:
        robot.stop()
    assert transmitted == 25 and refused == 25
    lines = [json.loads(l) for l in log.read_text().splitlines()]
    sessions: dict[str, list[int]] = {}
    for entry in lines:
        if entry["event"] == "frame":
            sessions.setdefault(entry["session"], []).append(entry["t_ms"])
    assert len(sessions) == transmitted
    for ts in sessions.values():
        assert all(b > a for a, b in zip(ts, ts[1:]))  # strictly increasing
    total_frames = sum(len(ts) for ts in sessions.values())
    ends = sum(1 for e in lines if e["event"] == "end")
    assert ends == transmitted  # every transmitted trajectory closed cleanly
    assert total_frames > 0
    _pass("deployment-safety-gate", started, 20.0)


# ---------------------------------------------------------------------------
# 9. End-to-end recycling fixture


def test_end_to_end_recycling_fixture():
    started = time.monotonic()
    scene = load_scene(fixture_text("scenes/recycling.json"))

    clean = interpret(parse_program(fixture_text("programs/recycling_clean.txt")), scene, ARM)
    clean_reports = {r.critic: r for r in run_critics(clean, scene, ARM)}
    assert clean_reports["collision"].flag is Flag.OK
    # all three objects picked and released
    kinds = [(e.kind, e.object_id) for e in clean.attachment.events]
    assert [k for k, _ in kinds] == ["attach", "detach"] * 3
    assert {oid for _, oid in kinds} == {"coffee_cup", "container", "water_bottle"}

    lowpass = interpret(parse_program(fixture_text("programs/recycling_lowpass.txt")), scene, ARM)
    low_reports = {r.critic: r for r in run_critics(lowpass, scene, ARM)}
    assert low_reports["collision"].flag is Flag.ERROR
    assert "water_bottle" in low_reports["collision"].explanation

    _pass("end-to-end-recycling-fixture", started, 10.0)
