"""Motion-level critics: five verifiers over execution traces, a plug-in
registry, the 0-10 program quality index, and structured fix messages.

Each critic is a pure function of (trajectory, scene, model, config) that
returns a flag (OK / Warning / Error) with an explanation, a fix hint, and
the measured extremum that triggered the verdict. New critics register at
startup and run without touching the existing ones.
"""

from __future__ import annotations

import enum
import math
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .geometry import Vec3, aabb_distance, capsule_aabb, convex_hull, hull_volume
from .kinematics import RobotModel
from .program import Trajectory
from .scene import Scene, apply_attachment, object_aabb


class Flag(enum.Enum):
    OK = "OK"
    WARNING = "Warning"
    ERROR = "Error"

    @property
    def severity(self) -> int:
        return {"OK": 0, "Warning": 1, "Error": 2}[self.value]

    @property
    def points(self) -> int:
        return 2 - self.severity


class NonMonotonicTimestampsError(Exception):
    pass


class UnknownCriticError(Exception):
    def __init__(self, name: str):
        super().__init__(f"unknown critic {name!r}")
        self.name = name


class IncompleteReportsError(Exception):
    pass


class NoViolationError(Exception):
    pass


@dataclass(frozen=True)
class Measurement:
    value: float
    unit: str
    t_ms: int | None = None


@dataclass(frozen=True)
class CriticReport:
    critic: str
    flag: Flag
    explanation: str
    fix_hint: str
    measurement: Measurement | None
    thresholds: dict[str, float]

    def __post_init__(self):
        if self.flag is not Flag.OK:
            if not self.explanation or not self.fix_hint:
                raise ValueError(f"{self.critic}: non-OK report needs explanation and fix hint")
            if self.measurement is None:
                raise ValueError(f"{self.critic}: non-OK report needs a measurement")


@dataclass(frozen=True)
class CriticConfig:
    v_warn: float = 1.0  # m/s, recommended safe link speed
    v_max: float = 2.0  # m/s, maximum allowable link speed
    d_warn: float = 0.05  # m, gripper-to-object clearance
    space_warn_ratio: float = 0.5  # fraction of the workspace volume
    score_warn: float = 0.5  # spearing score thresholds
    score_err: float = 1.0
    d_min: float = 0.02  # m, pinch interval bounds
    d_max: float = 0.05

    def __post_init__(self):
        if not self.v_warn < self.v_max:
            raise ValueError("v_warn must be < v_max")
        if not self.d_min < self.d_max:
            raise ValueError("d_min must be < d_max")
        if not self.score_warn < self.score_err:
            raise ValueError("score_warn must be < score_err")
        if not 0 < self.space_warn_ratio < 1:
            raise ValueError("space_warn_ratio must be in (0, 1)")


def critic_config_from_dict(doc: dict) -> CriticConfig:
    known = set(CriticConfig.__dataclass_fields__)
    return CriticConfig(**{k: float(v) for k, v in doc.items() if k in known})


@dataclass(frozen=True)
class ScoreIndex:
    points: dict[str, int]
    total: int


def _fmt(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else f"{v:g}"


def _check_monotone(traj: Trajectory) -> None:
    ts = [s.t_ms for s in traj.states]
    for a, b in zip(ts, ts[1:]):
        if b <= a:
            raise NonMonotonicTimestampsError(f"timestamps not strictly increasing at t={b} ms")


# ---------------------------------------------------------------------------
# the five critics


def critic_space_usage(traj: Trajectory, scene: Scene, model: RobotModel, cfg: CriticConfig) -> CriticReport:
    """Convex hull of link positions across the trajectory versus the
    allowed workspace: Warning above the volume ratio, Error outside the box."""
    thresholds = {"space_warn_ratio": cfg.space_warn_ratio}
    points: list[Vec3] = []
    stamps: list[int] = []
    for s in traj.states:
        for pose in s.frames.values():
            points.append(pose.position)
            stamps.append(s.t_ms)
        held = traj.attachment.held_at(s.t_ms)
        if held is not None and model.ee_link in s.frames:
            snapshot = apply_attachment(scene, traj.attachment, s.t_ms, s.frames[model.ee_link])
            try:
                for corner in object_aabb(snapshot.object_by_id(held.object_id)).corners():
                    points.append(corner)
                    stamps.append(s.t_ms)
            except Exception:
                pass
    box = scene.workspace
    worst_out = 0.0
    worst_t: int | None = None
    for p, t in zip(points, stamps):
        dx = max(box.lo.x - p.x, 0.0, p.x - box.hi.x)
        dy = max(box.lo.y - p.y, 0.0, p.y - box.hi.y)
        dz = max(box.lo.z - p.z, 0.0, p.z - box.hi.z)
        d = math.sqrt(dx * dx + dy * dy + dz * dz)
        if d > worst_out:
            worst_out, worst_t = d, t
    if worst_out > 0.0:
        return CriticReport(
            critic="space_usage",
            flag=Flag.ERROR,
            explanation=(
                f"The motion leaves the allowed workspace by {worst_out:.3f} m at t={worst_t} ms."
            ),
            fix_hint=(
                "Keep every waypoint inside the workspace box; lower or shorten the motion "
                "so no link crosses the boundary."
            ),
            measurement=Measurement(worst_out, "m", worst_t),
            thresholds=thresholds,
        )
    hull = convex_hull(points) if points else None
    volume = hull_volume(hull) if hull is not None else 0.0
    ratio = volume / scene.workspace_volume()
    if ratio > cfg.space_warn_ratio:
        return CriticReport(
            critic="space_usage",
            flag=Flag.WARNING,
            explanation=(
                f"The motion sweeps {ratio:.0%} of the workspace, above the "
                f"{cfg.space_warn_ratio:.0%} limit."
            ),
            fix_hint=(
                "Use tighter intermediate waypoints so the arm stays near the task area "
                "instead of sweeping across the workspace."
            ),
            measurement=Measurement(ratio, "ratio", None),
            thresholds=thresholds,
        )
    return CriticReport(
        critic="space_usage",
        flag=Flag.OK,
        explanation="",
        fix_hint="",
        measurement=Measurement(ratio, "ratio", None),
        thresholds=thresholds,
    )


def critic_collision(traj: Trajectory, scene: Scene, model: RobotModel, cfg: CriticConfig) -> CriticReport:
    """Gripper geometry versus every non-held object, via signed AABB distance."""
    thresholds = {"d_warn": cfg.d_warn}
    ee_cap = next(l.capsule for l in model.links if l.name == model.ee_link)
    best_d = math.inf
    best_obj: str | None = None
    best_t: int | None = None
    for s in traj.states:
        ee = s.frames[model.ee_link]
        gripper_box = capsule_aabb(
            ee.transform_point(ee_cap.a), ee.transform_point(ee_cap.b), ee_cap.radius
        )
        held = traj.attachment.held_at(s.t_ms)
        held_id = held.object_id if held else None
        snapshot = apply_attachment(scene, traj.attachment, s.t_ms, ee)
        for obj in snapshot.objects:
            if obj.id == held_id:
                continue
            d = aabb_distance(gripper_box, object_aabb(obj))
            if d < best_d:
                best_d, best_obj, best_t = d, obj.id, s.t_ms
    if best_obj is None:
        return CriticReport(
            critic="collision", flag=Flag.OK, explanation="", fix_hint="",
            measurement=None, thresholds=thresholds,
        )
    if best_d < 0:
        return CriticReport(
            critic="collision",
            flag=Flag.ERROR,
            explanation=(
                f"The gripper penetrates object '{best_obj}' by {-best_d:.3f} m at t={best_t} ms."
            ),
            fix_hint=(
                f"Add avoid_collision({best_obj}) before the offending move_to, or route "
                f"the motion higher above '{best_obj}'."
            ),
            measurement=Measurement(best_d, "m", best_t),
            thresholds=thresholds,
        )
    if best_d < cfg.d_warn:
        return CriticReport(
            critic="collision",
            flag=Flag.WARNING,
            explanation=(
                f"The gripper passes within {best_d:.3f} m of object '{best_obj}' at t={best_t} ms "
                f"(clearance threshold {_fmt(cfg.d_warn)} m)."
            ),
            fix_hint=(
                f"Increase clearance around '{best_obj}', e.g. with avoid_collision({best_obj}) "
                f"or higher waypoints."
            ),
            measurement=Measurement(best_d, "m", best_t),
            thresholds=thresholds,
        )
    return CriticReport(
        critic="collision",
        flag=Flag.OK,
        explanation="",
        fix_hint="",
        measurement=Measurement(best_d, "m", best_t),
        thresholds=thresholds,
    )


def critic_joint_speed(traj: Trajectory, scene: Scene, model: RobotModel, cfg: CriticConfig) -> CriticReport:
    """Per-link Cartesian speed between consecutive states, as a proxy for
    joint velocity: first speed above v_max returns Error immediately; any
    speed above v_warn leaves a Warning; otherwise OK."""
    thresholds = {"v_warn": cfg.v_warn, "v_max": cfg.v_max}
    _check_monotone(traj)
    states = traj.states
    names = list(states[0].frames) if states else []
    hint = (
        "To minimize joint speed, you can consider reducing the speed of the robot "
        "during [move_to] actions. This potentially increases the cycle time of the program."
    )
    flag = Flag.OK
    max_v = 0.0
    max_t: int | None = states[0].t_ms if states else None
    max_link = ""
    for prev, cur in zip(states, states[1:]):
        dt = (cur.t_ms - prev.t_ms) / 1000.0
        for link in names:
            p0 = prev.frames[link].position
            p1 = cur.frames[link].position
            v = math.sqrt((p1.x - p0.x) ** 2 + (p1.y - p0.y) ** 2 + (p1.z - p0.z) ** 2) / dt
            if v > max_v:
                max_v, max_t, max_link = v, cur.t_ms, link
            if v > cfg.v_max:
                return CriticReport(
                    critic="joint_speed",
                    flag=Flag.ERROR,
                    explanation=(
                        f"Joint speed exceeds the maximum allowable value of {_fmt(cfg.v_max)} m/s "
                        f"({v:.2f} m/s on link '{link}' at t={cur.t_ms} ms)."
                    ),
                    fix_hint=hint,
                    measurement=Measurement(v, "m/s", cur.t_ms),
                    thresholds=thresholds,
                )
            if v > cfg.v_warn:
                flag = Flag.WARNING
    if flag is Flag.WARNING:
        return CriticReport(
            critic="joint_speed",
            flag=Flag.WARNING,
            explanation=f"Joint speed is higher than the recommended value of {_fmt(cfg.v_warn)} m/s.",
            fix_hint=hint,
            measurement=Measurement(max_v, "m/s", max_t),
            thresholds=thresholds,
        )
    return CriticReport(
        critic="joint_speed",
        flag=Flag.OK,
        explanation="",
        fix_hint="",
        measurement=Measurement(max_v, "m/s", max_t),
        thresholds=thresholds,
    )


def critic_ee_pose(traj: Trajectory, scene: Scene, model: RobotModel, cfg: CriticConfig) -> CriticReport:
    """Spearing risk: speed-weighted alignment of the gripper's motion with
    its finger direction. ps_i = v_i * max(0, cos theta_i)."""
    thresholds = {"score_warn": cfg.score_warn, "score_err": cfg.score_err}
    _check_monotone(traj)
    states = traj.states
    ps_max = 0.0
    ps_t: int | None = states[0].t_ms if states else None
    for cur, nxt in zip(states, states[1:]):
        dt = (nxt.t_ms - cur.t_ms) / 1000.0
        p0 = cur.frames[model.ee_link].position
        p1 = nxt.frames[model.ee_link].position
        dp = p1 - p0
        dist = dp.norm()
        if dist < 1e-12:
            continue
        v = dist / dt
        finger = cur.frames[model.ee_link].transform_dir(model.finger_axis)
        cos_a = dp.dot(finger) / (dist * finger.norm())
        ps = v * max(0.0, cos_a)
        if ps > ps_max:
            ps_max, ps_t = ps, nxt.t_ms
    if ps_max >= cfg.score_err:
        return CriticReport(
            critic="ee_pose",
            flag=Flag.ERROR,
            explanation=(
                f"The gripper spears along its finger direction with pose score "
                f"{ps_max:.2f} at t={ps_t} ms (limit {_fmt(cfg.score_err)})."
            ),
            fix_hint=(
                "Slow the approach (reduce_speed before descents) or split the descent "
                "into a shorter final segment."
            ),
            measurement=Measurement(ps_max, "m/s", ps_t),
            thresholds=thresholds,
        )
    if ps_max >= cfg.score_warn:
        return CriticReport(
            critic="ee_pose",
            flag=Flag.WARNING,
            explanation=(
                f"The gripper moves quickly along its finger direction (pose score "
                f"{ps_max:.2f} at t={ps_t} ms, threshold {_fmt(cfg.score_warn)})."
            ),
            fix_hint=(
                "Reduce the speed of descents toward objects so fast motion is never "
                "aligned with the fingers."
            ),
            measurement=Measurement(ps_max, "m/s", ps_t),
            thresholds=thresholds,
        )
    return CriticReport(
        critic="ee_pose",
        flag=Flag.OK,
        explanation="",
        fix_hint="",
        measurement=Measurement(ps_max, "m/s", ps_t),
        thresholds=thresholds,
    )


def critic_pinch_point(traj: Trajectory, scene: Scene, model: RobotModel, cfg: CriticConfig) -> CriticReport:
    """Pairwise link proximity: d < d_min is an Error, d in [d_min, d_max)
    a Warning, d >= d_max is OK."""
    thresholds = {"d_min": cfg.d_min, "d_max": cfg.d_max}
    best_d = math.inf
    best_pair: tuple[str, str] | None = None
    best_t: int | None = None
    for s in traj.states:
        for pair, d in s.proximity.items():
            if d < best_d:
                best_d, best_pair, best_t = d, pair, s.t_ms
    if best_pair is None:
        return CriticReport(
            critic="pinch_point", flag=Flag.OK, explanation="", fix_hint="",
            measurement=None, thresholds=thresholds,
        )
    if best_d < cfg.d_min:
        return CriticReport(
            critic="pinch_point",
            flag=Flag.ERROR,
            explanation=(
                f"Links '{best_pair[0]}' and '{best_pair[1]}' close to {best_d:.3f} m at "
                f"t={best_t} ms, a dangerous pinch region."
            ),
            fix_hint=(
                "Rearrange waypoints so the arm never folds that tightly, or approach "
                "targets from a different direction."
            ),
            measurement=Measurement(best_d, "m", best_t),
            thresholds=thresholds,
        )
    if best_d < cfg.d_max:
        return CriticReport(
            critic="pinch_point",
            flag=Flag.WARNING,
            explanation=(
                f"Links '{best_pair[0]}' and '{best_pair[1]}' come within {best_d:.3f} m at "
                f"t={best_t} ms."
            ),
            fix_hint="Add clearance between arm segments by adjusting intermediate waypoints.",
            measurement=Measurement(best_d, "m", best_t),
            thresholds=thresholds,
        )
    return CriticReport(
        critic="pinch_point",
        flag=Flag.OK,
        explanation="",
        fix_hint="",
        measurement=Measurement(best_d, "m", best_t),
        thresholds=thresholds,
    )


# ---------------------------------------------------------------------------
# registry, selection, scoring

CriticFn = Callable[[Trajectory, Scene, RobotModel, CriticConfig], CriticReport]

_REGISTRY: "OrderedDict[str, CriticFn]" = OrderedDict()


def register_critic(name: str, fn: CriticFn, replace: bool = False) -> None:
    if name in _REGISTRY and not replace:
        raise ValueError(f"critic {name!r} already registered")
    _REGISTRY[name] = fn


def registered_critics() -> list[str]:
    return list(_REGISTRY)


register_critic("space_usage", critic_space_usage)
register_critic("collision", critic_collision)
register_critic("joint_speed", critic_joint_speed)
register_critic("ee_pose", critic_ee_pose)
register_critic("pinch_point", critic_pinch_point)


def run_critics(
    traj: Trajectory,
    scene: Scene,
    model: RobotModel,
    cfg: CriticConfig | None = None,
    selected: list[str] | set[str] | None = None,
) -> list[CriticReport]:
    """Run exactly the selected critics, in registration order."""
    cfg = cfg or CriticConfig()
    if selected is None:
        chosen = set(_REGISTRY)
    else:
        chosen = set(selected)
        for name in chosen:
            if name not in _REGISTRY:
                raise UnknownCriticError(name)
    return [fn(traj, scene, model, cfg) for name, fn in _REGISTRY.items() if name in chosen]


def score_index(reports: list[CriticReport]) -> ScoreIndex:
    """0-10 quality index: 2 points per OK, 1 per Warning, 0 per Error."""
    expected = registered_critics()
    seen = [r.critic for r in reports]
    if sorted(seen) != sorted(expected):
        raise IncompleteReportsError(
            f"need exactly one report per critic {expected}, got {seen}"
        )
    by_name = {r.critic: r for r in reports}
    points = {name: by_name[name].flag.points for name in expected}
    return ScoreIndex(points=points, total=sum(points.values()))


def fix_message(report: CriticReport) -> str:
    """Structured feedback for the language model: '<Flag>: <explanation> <fix_hint>'."""
    if report.flag is Flag.OK:
        raise NoViolationError(f"critic {report.critic} reported OK; nothing to fix")
    return f"{report.flag.value}: {report.explanation} {report.fix_hint}"


def report_to_document(report: CriticReport) -> dict:
    return {
        "critic": report.critic,
        "flag": report.flag.value,
        "explanation": report.explanation,
        "fix_hint": report.fix_hint,
        "measurement": (
            None
            if report.measurement is None
            else {
                "value": report.measurement.value,
                "unit": report.measurement.unit,
                "t_ms": report.measurement.t_ms,
            }
        ),
        "thresholds": report.thresholds,
    }


def report_from_document(doc: dict) -> CriticReport:
    m = doc.get("measurement")
    return CriticReport(
        critic=doc["critic"],
        flag=Flag(doc["flag"]),
        explanation=doc.get("explanation", ""),
        fix_hint=doc.get("fix_hint", ""),
        measurement=None if m is None else Measurement(m["value"], m["unit"], m.get("t_ms")),
        thresholds={k: float(v) for k, v in doc.get("thresholds", {}).items()},
    )


# Textual rules for the prompt-embedded ablation mode: same constraints the
# critics enforce, written as instructions instead of executed checks.
EMBEDDED_RULES_TEXT = """Safety rules the program must satisfy:
1. Joint speed: no part of the arm may move faster than {v_warn} m/s (hard cap {v_max} m/s). Use reduce_speed to slow motions.
2. Collision: the gripper must keep at least {d_warn} m clearance from every object it is not holding and must never touch one.
3. Space usage: motions must stay inside the workspace and sweep less than {ratio:.0%} of it; avoid wide detours.
4. End-effector pose: never move fast along the finger direction (spearing); keep descents slow.
5. Pinch points: arm segments must keep at least {d_max} m separation from each other.
Review the program against these rules; if any part might violate one, revise the code to fix it."""


def embedded_rules_text(cfg: CriticConfig | None = None) -> str:
    cfg = cfg or CriticConfig()
    return EMBEDDED_RULES_TEXT.format(
        v_warn=_fmt(cfg.v_warn),
        v_max=_fmt(cfg.v_max),
        d_warn=_fmt(cfg.d_warn),
        ratio=cfg.space_warn_ratio,
        d_max=_fmt(cfg.d_max),
    )
