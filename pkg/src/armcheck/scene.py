"""Environment state: objects, workspace bounds, and grasp attachments.

A scene is the single source of truth for what the critics collide against.
Scenes are immutable after load; attachment queries return value snapshots
with the held object moved rigidly with the gripper.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

from .geometry import Aabb, Pose, Quat, Vec3, aabb_of_points

SCENE_SCHEMA = 1


class SceneParseError(Exception):
    """Malformed scene document; carries a human-readable location."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        super().__init__(message)
        self.line = line
        self.column = column


class SceneValidationError(Exception):
    """Well-formed document violating a scene invariant."""


class UnknownObjectError(Exception):
    def __init__(self, object_id: str):
        super().__init__(f"unknown object id {object_id!r}")
        self.object_id = object_id


@dataclass(frozen=True)
class SceneObject:
    id: str
    position: Vec3
    scale: Vec3  # full extents of the oriented box
    orientation: Quat
    kind: str = ""

    def pose(self) -> Pose:
        return Pose(self.position, self.orientation)


@dataclass(frozen=True)
class Scene:
    objects: tuple[SceneObject, ...]
    workspace: Aabb
    robot_base: Pose
    default_finger_dir: Vec3 = field(default=Vec3(0, 0, -1))

    def object_by_id(self, object_id: str) -> SceneObject:
        for obj in self.objects:
            if obj.id == object_id:
                return obj
        raise UnknownObjectError(object_id)

    def workspace_volume(self) -> float:
        return self.workspace.volume()


@dataclass(frozen=True)
class AttachmentEvent:
    t_ms: int
    kind: str  # "attach" | "detach"
    object_id: str
    # attach: object pose relative to the end-effector, frozen at the grasp
    # detach: absolute world rest pose at release
    pose: Pose


@dataclass(frozen=True)
class AttachmentState:
    events: tuple[AttachmentEvent, ...] = ()

    def held_at(self, t_ms: int) -> AttachmentEvent | None:
        """The active attach event at time t, or None when nothing is held."""
        current: AttachmentEvent | None = None
        for ev in self.events:
            if ev.t_ms > t_ms:
                break
            current = ev if ev.kind == "attach" else None
        return current

    def rest_pose_overrides(self, t_ms: int) -> dict[str, Pose]:
        """World poses of objects released at or before time t."""
        out: dict[str, Pose] = {}
        for ev in self.events:
            if ev.t_ms > t_ms:
                break
            if ev.kind == "detach":
                out[ev.object_id] = ev.pose
        return out

    def with_event(self, ev: AttachmentEvent) -> "AttachmentState":
        if self.events:
            last = self.events[-1]
            if ev.t_ms < last.t_ms:
                raise ValueError("attachment events must be time-ordered")
            if ev.kind == last.kind:
                raise ValueError(f"attachment events must alternate, got two {ev.kind!r}")
        elif ev.kind != "attach":
            raise ValueError("first attachment event must be an attach")
        return AttachmentState(self.events + (ev,))


def _vec(doc, key, default=None) -> Vec3:
    val = doc.get(key, default)
    if val is None:
        raise SceneValidationError(f"missing field {key!r}")
    return Vec3(float(val[0]), float(val[1]), float(val[2]))


def load_scene(document: str | dict) -> Scene:
    """Parse and validate a scene document (JSON text or decoded dict)."""
    if isinstance(document, str):
        try:
            doc = json.loads(document)
        except json.JSONDecodeError as e:
            raise SceneParseError(f"malformed scene document: {e.msg}", line=e.lineno, column=e.colno) from e
    else:
        doc = document
    if doc.get("schema") != SCENE_SCHEMA:
        raise SceneValidationError(f"unsupported scene schema: {doc.get('schema')!r}")
    ws = doc.get("workspace")
    if not ws:
        raise SceneValidationError("scene missing workspace")
    workspace = Aabb(_vec(ws, "min"), _vec(ws, "max"))
    if workspace.volume() <= 0:
        raise SceneValidationError("workspace must have positive volume")
    base_doc = doc.get("robot_base", {})
    base_pos = _vec(base_doc, "position", [0, 0, 0])
    base_ori = base_doc.get("orientation", [0, 0, 0, 1])
    robot_base = Pose(base_pos, Quat(*[float(v) for v in base_ori]).normalized())
    if not workspace.contains(base_pos):
        raise SceneValidationError("robot base must lie inside the workspace")
    objects = []
    seen: set[str] = set()
    for entry in doc.get("objects", []):
        oid = entry.get("id")
        if not oid:
            raise SceneValidationError("object missing id")
        if oid in seen:
            raise SceneValidationError(f"duplicate object id {oid!r}")
        seen.add(oid)
        scale = _vec(entry, "scale")
        if scale.x <= 0 or scale.y <= 0 or scale.z <= 0:
            raise SceneValidationError(f"object {oid!r}: extents must be positive")
        ori = entry.get("orientation", [0, 0, 0, 1])
        objects.append(
            SceneObject(
                id=oid,
                position=_vec(entry, "position"),
                scale=scale,
                orientation=Quat(*[float(v) for v in ori]).normalized(),
                kind=entry.get("kind", ""),
            )
        )
    finger = doc.get("default_finger_dir", [0, 0, -1])
    return Scene(
        objects=tuple(objects),
        workspace=workspace,
        robot_base=robot_base,
        default_finger_dir=Vec3(*[float(v) for v in finger]).normalized(),
    )


def load_scene_file(path: str | Path) -> Scene:
    return load_scene(Path(path).read_text())


def scene_to_document(scene: Scene) -> dict:
    return {
        "schema": SCENE_SCHEMA,
        "workspace": {
            "min": [scene.workspace.lo.x, scene.workspace.lo.y, scene.workspace.lo.z],
            "max": [scene.workspace.hi.x, scene.workspace.hi.y, scene.workspace.hi.z],
        },
        "robot_base": {
            "position": list(scene.robot_base.position.as_array()),
            "orientation": [
                scene.robot_base.orientation.x,
                scene.robot_base.orientation.y,
                scene.robot_base.orientation.z,
                scene.robot_base.orientation.w,
            ],
        },
        "default_finger_dir": list(scene.default_finger_dir.as_array()),
        "objects": [
            {
                "id": o.id,
                "position": list(o.position.as_array()),
                "scale": list(o.scale.as_array()),
                "orientation": [o.orientation.x, o.orientation.y, o.orientation.z, o.orientation.w],
                "kind": o.kind,
            }
            for o in scene.objects
        ],
    }


def object_aabb(obj: SceneObject) -> Aabb:
    """World-frame envelope of the oriented box (all 8 rotated corners)."""
    hx, hy, hz = obj.scale.x / 2, obj.scale.y / 2, obj.scale.z / 2
    pose = obj.pose()
    corners = [
        pose.transform_point(Vec3(sx * hx, sy * hy, sz * hz))
        for sx in (-1, 1)
        for sy in (-1, 1)
        for sz in (-1, 1)
    ]
    return aabb_of_points(corners)


def apply_attachment(scene: Scene, attachment: AttachmentState, t_ms: int, ee_pose: Pose) -> Scene:
    """Scene snapshot at time t: the held object rides the gripper, released
    objects rest where they were dropped, everything else is untouched."""
    held = attachment.held_at(t_ms)
    rests = attachment.rest_pose_overrides(t_ms)
    if not held and not rests:
        return scene
    new_objects = []
    for obj in scene.objects:
        if held is not None and obj.id == held.object_id:
            world = ee_pose.compose(held.pose)
            new_objects.append(replace(obj, position=world.position, orientation=world.orientation))
        elif obj.id in rests:
            rest = rests[obj.id]
            new_objects.append(replace(obj, position=rest.position, orientation=rest.orientation))
        else:
            new_objects.append(obj)
    known = {o.id for o in scene.objects}
    for ev in attachment.events:
        if ev.object_id not in known:
            raise UnknownObjectError(ev.object_id)
    return replace(scene, objects=tuple(new_objects))
