"""Robot-program DSL: parser and interpreter.

Programs are straight-line sequences of high-level commands, one per line::

    # pick the cup
    move_to(0.35, -0.15, 0.40)
    close_gripper()
    reduce_speed(25)
    avoid_collision(water_bottle)

The interpreter turns a parsed program into a fixed-rate motion trace: IK per
``move_to`` target, joint-space linear interpolation sampled every ``dt_ms``,
gripper events that attach/detach scene objects, and per-state pairwise link
proximity from the model's collision capsules.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import Pose, Quat, Vec3, point_aabb_distance, segment_distance
from .kinematics import RobotModel, UnreachableError, forward_kinematics, solve_ik
from .scene import (
    AttachmentEvent,
    AttachmentState,
    Scene,
    UnknownObjectError,
    apply_attachment,
    object_aabb,
)

TRAJECTORY_SCHEMA = 1

API_SIGNATURES: dict[str, tuple[str, ...]] = {
    "move_to": ("number", "number", "number"),
    "open_gripper": (),
    "close_gripper": (),
    "reduce_speed": ("number",),
    "avoid_collision": ("identifier",),
}


class ProgramSyntaxError(Exception):
    def __init__(self, message: str, line: int, column: int = 1):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column
        self.detail = message


class UnknownApiError(Exception):
    def __init__(self, name: str, line: int):
        super().__init__(f"line {line}: unknown command {name!r}")
        self.name = name
        self.line = line


class ArityError(Exception):
    def __init__(self, name: str, line: int, expected: int, got: int):
        super().__init__(f"line {line}: {name} takes {expected} argument(s), got {got}")
        self.name = name
        self.line = line


class EmptyProgramError(Exception):
    pass


class IkUnreachableError(Exception):
    def __init__(self, line: int, target: Vec3, best_pos_error: float):
        super().__init__(
            f"line {line}: move_to target ({target.x:.3f}, {target.y:.3f}, {target.z:.3f}) "
            f"unreachable (best error {best_pos_error:.4g} m)"
        )
        self.line = line
        self.target = target
        self.best_pos_error = best_pos_error


class TrajectoryFormatError(Exception):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True)
class Instruction:
    op: str
    args: tuple
    line: int


@dataclass(frozen=True)
class RobotProgram:
    instructions: tuple[Instruction, ...]
    source: str


_CALL_RE = re.compile(r"^\s*([A-Za-z_][A-Za-z0-9_]*)\s*\((.*)\)\s*$")
_NUMBER_RE = re.compile(r"^[-+]?(\d+\.?\d*|\.\d+)([eE][-+]?\d+)?$")
_IDENT_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")


def parse_program(source: str) -> RobotProgram:
    """One instruction per non-blank, non-comment line; ``#`` starts a comment."""
    instructions: list[Instruction] = []
    for lineno, raw in enumerate(source.splitlines(), start=1):
        code = raw.split("#", 1)[0].strip()
        if not code:
            continue
        m = _CALL_RE.match(code)
        if not m:
            col = len(raw) - len(raw.lstrip()) + 1
            raise ProgramSyntaxError(f"expected `name(arg, ...)`, got {code!r}", lineno, col)
        name, argtext = m.group(1), m.group(2).strip()
        if name not in API_SIGNATURES:
            raise UnknownApiError(name, lineno)
        sig = API_SIGNATURES[name]
        tokens = [t.strip() for t in argtext.split(",")] if argtext else []
        if len(tokens) != len(sig):
            raise ArityError(name, lineno, len(sig), len(tokens))
        args = []
        for tok, want in zip(tokens, sig):
            if want == "number":
                if not _NUMBER_RE.match(tok):
                    raise ProgramSyntaxError(f"expected a number, got {tok!r}", lineno, raw.find(tok) + 1)
                args.append(float(tok))
            else:
                if not _IDENT_RE.match(tok):
                    raise ProgramSyntaxError(f"expected an object id, got {tok!r}", lineno, raw.find(tok) + 1)
                args.append(tok)
        if name == "reduce_speed" and not 0 < args[0] <= 100:
            raise ProgramSyntaxError(f"reduce_speed percent must be in (0, 100], got {args[0]}", lineno)
        instructions.append(Instruction(name, tuple(args), lineno))
    if not instructions:
        raise EmptyProgramError("program has no instructions")
    return RobotProgram(tuple(instructions), source)


@dataclass(frozen=True)
class InterpreterConfig:
    dt_ms: int = 50
    omega_nom: float = 1.0  # rad/s at 100% speed
    grasp_tol: float = 0.03  # m, gripper point to object AABB surface
    avoid_clearance: float = 0.10  # m above an avoided obstacle's top
    home: tuple[float, ...] | None = None
    ik_max_iters: int = 200
    ik_pos_tol: float = 1e-3
    ik_dir_tol_deg: float = 2.0


def interpreter_config_from_dict(doc: dict) -> InterpreterConfig:
    known = {f for f in InterpreterConfig.__dataclass_fields__}
    kwargs = {k: v for k, v in doc.items() if k in known}
    if "home" in kwargs and kwargs["home"] is not None:
        kwargs["home"] = tuple(float(v) for v in kwargs["home"])
    return InterpreterConfig(**kwargs)


@dataclass
class RobotState:
    t_ms: int
    q: tuple[float, ...]
    frames: dict[str, Pose]
    proximity: dict[tuple[str, str], float]
    gripper_open: bool


@dataclass
class LegRecord:
    line: int
    start_ms: int
    end_ms: int
    duration_s: float  # continuous formula duration, before sampling


@dataclass
class Trajectory:
    states: list[RobotState]
    attachment: AttachmentState
    source: str = ""
    legs: list[LegRecord] = field(default_factory=list)

    def span_ms(self) -> tuple[int, int]:
        return (self.states[0].t_ms, self.states[-1].t_ms) if self.states else (0, 0)


def move_duration_s(dq: np.ndarray, speed_factor: float, cfg: InterpreterConfig) -> float:
    """T = max_j |dq_j| / (omega_nom * speed_factor)."""
    return float(np.max(np.abs(dq))) / (cfg.omega_nom * speed_factor)


def _proximity_pairs(model: RobotModel) -> list[tuple[str, str]]:
    names = model.link_names
    return [(names[i], names[j]) for i in range(len(names)) for j in range(i + 2, len(names))]


def _proximity(model: RobotModel, frames: dict[str, Pose], pairs: list[tuple[str, str]]) -> dict[tuple[str, str], float]:
    caps = {}
    for link in model.links:
        pose = frames[link.name]
        caps[link.name] = (
            pose.transform_point(link.capsule.a),
            pose.transform_point(link.capsule.b),
            link.capsule.radius,
        )
    out = {}
    for a, b in pairs:
        a0, a1, ra = caps[a]
        b0, b1, rb = caps[b]
        out[(a, b)] = max(0.0, segment_distance(a0, a1, b0, b1) - ra - rb)
    return out


def _crossing_vias(p0: Vec3, p1: Vec3, scene: Scene, attachment: AttachmentState, t_ms: int,
                   ee: Pose, avoid_ids: list[str], clearance: float) -> list[Vec3]:
    """Via points above avoided obstacles whose footprint the segment crosses."""
    vias: list[tuple[float, Vec3]] = []
    snapshot = apply_attachment(scene, attachment, t_ms, ee)
    for oid in avoid_ids:
        box = object_aabb(snapshot.object_by_id(oid))
        # Liang-Barsky clip of the xy segment against the box footprint
        dx, dy = p1.x - p0.x, p1.y - p0.y
        t0, t1 = 0.0, 1.0
        ok = True
        for p, q in ((-dx, p0.x - box.lo.x), (dx, box.hi.x - p0.x), (-dy, p0.y - box.lo.y), (dy, box.hi.y - p0.y)):
            if abs(p) < 1e-15:
                if q < 0:
                    ok = False
                    break
                continue
            r = q / p
            if p < 0:
                t0 = max(t0, r)
            else:
                t1 = min(t1, r)
            if t0 > t1:
                ok = False
                break
        if not ok:
            continue
        z_entry = p0.z + (p1.z - p0.z) * t0
        z_exit = p0.z + (p1.z - p0.z) * t1
        top = box.hi.z + clearance
        if min(z_entry, z_exit) < top:
            tm = (t0 + t1) / 2
            vias.append((t0, Vec3(p0.x + dx * tm, p0.y + dy * tm, top)))
    vias.sort(key=lambda pair: pair[0])
    return [v for _, v in vias]


def interpret(
    program: RobotProgram,
    scene: Scene,
    model: RobotModel,
    cfg: InterpreterConfig | None = None,
) -> Trajectory:
    """Execute a program against a scene, producing the sampled motion trace."""
    cfg = cfg or InterpreterConfig()
    if not program.instructions:
        raise EmptyProgramError("program has no instructions")
    pairs = _proximity_pairs(model)
    base = scene.robot_base
    q = np.array(cfg.home, dtype=float) if cfg.home is not None else model.home_q()
    if q.shape != (model.dof,):
        raise ValueError(f"home configuration must have {model.dof} joints")
    lo, hi = model.lower_limits(), model.upper_limits()
    q = np.clip(q, lo, hi)

    states: list[RobotState] = []
    legs: list[LegRecord] = []
    attachment = AttachmentState()
    gripper_open = True
    speed_factor = 1.0
    avoid_ids: list[str] = []
    t_ms = 0

    def emit(qv: np.ndarray, t: int):
        frames = forward_kinematics(model, qv, base)
        states.append(
            RobotState(
                t_ms=t,
                q=tuple(float(v) for v in qv),
                frames=frames,
                proximity=_proximity(model, frames, pairs),
                gripper_open=gripper_open,
            )
        )

    emit(q, 0)

    def current_ee() -> Pose:
        return states[-1].frames[model.ee_link]

    for ins in program.instructions:
        if ins.op == "reduce_speed":
            speed_factor = ins.args[0] / 100.0
        elif ins.op == "avoid_collision":
            scene.object_by_id(ins.args[0])  # raises UnknownObjectError
            if ins.args[0] not in avoid_ids:
                avoid_ids.append(ins.args[0])
        elif ins.op in ("open_gripper", "close_gripper"):
            closing = ins.op == "close_gripper"
            ee = current_ee()
            t_ms += cfg.dt_ms
            if closing and gripper_open:
                gripper_open = False
                target_obj = _nearest_graspable(scene, attachment, t_ms, ee, cfg.grasp_tol)
                if target_obj is not None:
                    offset = ee.inverse().compose(target_obj.pose())
                    attachment = attachment.with_event(
                        AttachmentEvent(t_ms, "attach", target_obj.id, offset)
                    )
            elif not closing and not gripper_open:
                gripper_open = True
                held = attachment.held_at(t_ms - 1)
                if held is not None:
                    rest = ee.compose(held.pose)
                    attachment = attachment.with_event(
                        AttachmentEvent(t_ms, "detach", held.object_id, rest)
                    )
            else:
                gripper_open = not closing
            emit(q, t_ms)
        elif ins.op == "move_to":
            target = Vec3(*ins.args)
            ee = current_ee()
            waypoints = _crossing_vias(
                ee.position, target, scene, attachment, t_ms, ee, avoid_ids, cfg.avoid_clearance
            )
            start_ms = t_ms
            total_duration = 0.0
            for wp in waypoints + [target]:
                try:
                    q_target = solve_ik(
                        model,
                        wp,
                        scene.default_finger_dir,
                        q,
                        base_pose=base,
                        pos_tol=cfg.ik_pos_tol,
                        dir_tol_deg=cfg.ik_dir_tol_deg,
                        max_iters=cfg.ik_max_iters,
                    )
                except UnreachableError as e:
                    raise IkUnreachableError(ins.line, wp, e.best_pos_error) from e
                dq = q_target - q
                if float(np.max(np.abs(dq))) < 1e-12:
                    continue
                duration = move_duration_s(dq, speed_factor, cfg)
                total_duration += duration
                n = max(1, math.ceil(duration * 1000.0 / cfg.dt_ms))
                for i in range(1, n + 1):
                    t_ms += cfg.dt_ms
                    emit(q + dq * (i / n), t_ms)
                q = q_target
            legs.append(LegRecord(ins.line, start_ms, t_ms, total_duration))
        else:  # pragma: no cover - parser rejects unknown ops
            raise UnknownApiError(ins.op, ins.line)

    return Trajectory(states=states, attachment=attachment, source=program.source, legs=legs)


def _nearest_graspable(scene: Scene, attachment: AttachmentState, t_ms: int, ee: Pose, tol: float):
    snapshot = apply_attachment(scene, attachment, t_ms, ee)
    best = None
    best_d = math.inf
    for obj in snapshot.objects:
        d = point_aabb_distance(ee.position, object_aabb(obj))
        if d <= tol and d < best_d:
            best, best_d = obj, d
    return best


# ---------------------------------------------------------------------------
# trajectory interchange format (JSON lines)

def _pose_doc(p: Pose) -> dict:
    return {
        "p": [p.position.x, p.position.y, p.position.z],
        "o": [p.orientation.x, p.orientation.y, p.orientation.z, p.orientation.w],
    }


def _pose_from_doc(doc: dict) -> Pose:
    return Pose(Vec3(*doc["p"]), Quat(*doc["o"]).normalized())


def trajectory_to_lines(traj: Trajectory) -> list[str]:
    header = {
        "schema": TRAJECTORY_SCHEMA,
        "attachment": [
            {"t_ms": ev.t_ms, "kind": ev.kind, "object_id": ev.object_id, "pose": _pose_doc(ev.pose)}
            for ev in traj.attachment.events
        ],
    }
    lines = [json.dumps(header)]
    for s in traj.states:
        lines.append(
            json.dumps(
                {
                    "t_ms": s.t_ms,
                    "q": list(s.q),
                    "frames": {name: _pose_doc(pose) for name, pose in s.frames.items()},
                    "proximity": {f"{a}|{b}": d for (a, b), d in s.proximity.items()},
                    "gripper_open": s.gripper_open,
                }
            )
        )
    return lines


def save_trajectory(traj: Trajectory, path: str | Path) -> None:
    Path(path).write_text("\n".join(trajectory_to_lines(traj)) + "\n")


def trajectory_from_lines(lines: list[str]) -> Trajectory:
    states: list[RobotState] = []
    events: list[AttachmentEvent] = []
    start = 0
    if lines:
        try:
            first = json.loads(lines[0])
        except json.JSONDecodeError as e:
            raise TrajectoryFormatError(f"malformed record: {e.msg}", 1) from e
        if isinstance(first, dict) and "schema" in first:
            if first["schema"] != TRAJECTORY_SCHEMA:
                raise TrajectoryFormatError(f"unsupported trajectory schema {first['schema']!r}", 1)
            for ev in first.get("attachment", []):
                events.append(
                    AttachmentEvent(int(ev["t_ms"]), ev["kind"], ev["object_id"], _pose_from_doc(ev["pose"]))
                )
            start = 1
    prev_t = None
    for idx in range(start, len(lines)):
        raw = lines[idx].strip()
        if not raw:
            continue
        lineno = idx + 1
        try:
            doc = json.loads(raw)
        except json.JSONDecodeError as e:
            raise TrajectoryFormatError(f"malformed record: {e.msg}", lineno) from e
        try:
            t = int(doc["t_ms"])
            state = RobotState(
                t_ms=t,
                q=tuple(float(v) for v in doc["q"]),
                frames={name: _pose_from_doc(p) for name, p in doc["frames"].items()},
                proximity={
                    tuple(key.split("|", 1)): float(d) for key, d in doc.get("proximity", {}).items()
                },
                gripper_open=bool(doc["gripper_open"]),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise TrajectoryFormatError(f"bad state record: {e}", lineno) from e
        if prev_t is not None and t <= prev_t:
            raise TrajectoryFormatError(f"non-monotone timestamp {t}", lineno)
        prev_t = t
        states.append(state)
    if not states:
        raise TrajectoryFormatError("no states in trajectory", 1)
    return Trajectory(states=states, attachment=AttachmentState(tuple(events)))


def load_trajectory(path: str | Path) -> Trajectory:
    return trajectory_from_lines(Path(path).read_text().splitlines())
