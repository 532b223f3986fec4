"""Scene loading, oriented-box envelopes, and attachment snapshots."""

import json
import math

import numpy as np
import pytest

from armcheck.fixtures import fixture_text
from armcheck.geometry import Pose, Quat, Vec3
from armcheck.scene import (
    AttachmentEvent,
    AttachmentState,
    Scene,
    SceneObject,
    SceneParseError,
    SceneValidationError,
    apply_attachment,
    load_scene,
    object_aabb,
    scene_to_document,
)

BASIC = {
    "schema": 1,
    "workspace": {"min": [-1, -1, 0], "max": [1, 1, 1]},
    "robot_base": {"position": [0, 0, 0], "orientation": [0, 0, 0, 1]},
    "objects": [
        {"id": "a", "position": [0.3, 0, 0.05], "scale": [0.1, 0.1, 0.1], "orientation": [0, 0, 0, 1], "kind": "box"},
        {"id": "b", "position": [0.3, 0.2, 0.05], "scale": [0.1, 0.1, 0.1], "orientation": [0, 0, 0, 1], "kind": "box"},
        {"id": "c", "position": [0.3, -0.2, 0.05], "scale": [0.1, 0.1, 0.1], "orientation": [0, 0, 0, 1], "kind": "box"},
    ],
}


class TestLoadScene:
    def test_three_objects(self):
        scene = load_scene(json.dumps(BASIC))
        assert len(scene.objects) == 3
        assert scene.workspace_volume() == pytest.approx(4.0)

    def test_duplicate_id_named(self):
        doc = dict(BASIC, objects=BASIC["objects"] + [dict(BASIC["objects"][0], id="apple")] * 2)
        with pytest.raises(SceneValidationError, match="apple"):
            load_scene(doc)

    def test_sorting_fixture_ids_preserved(self):
        scene = load_scene(fixture_text("scenes/sorting.json"))
        assert [o.id for o in scene.objects] == [
            "red_apple_1",
            "red_apple_2",
            "green_apple",
            "white_box",
            "brown_box",
        ]

    def test_malformed_document_reports_location(self):
        with pytest.raises(SceneParseError) as exc:
            load_scene('{"schema": 1,\n  "workspace": }')
        assert exc.value.line == 2

    def test_nonpositive_extents_rejected(self):
        doc = dict(BASIC, objects=[dict(BASIC["objects"][0], scale=[0.1, 0, 0.1])])
        with pytest.raises(SceneValidationError):
            load_scene(doc)

    def test_degenerate_workspace_rejected(self):
        doc = dict(BASIC, workspace={"min": [0, 0, 0], "max": [1, 1, 0]})
        with pytest.raises(SceneValidationError):
            load_scene(doc)

    def test_base_outside_workspace_rejected(self):
        doc = dict(BASIC, robot_base={"position": [5, 0, 0]})
        with pytest.raises(SceneValidationError):
            load_scene(doc)

    def test_round_trip_idempotent(self):
        scene = load_scene(json.dumps(BASIC))
        again = load_scene(json.dumps(scene_to_document(scene)))
        assert again == scene

    def test_shipped_scenes_load(self):
        for name in ("recycling", "sorting", "breakfast"):
            scene = load_scene(fixture_text(f"scenes/{name}.json"))
            assert scene.objects


class TestObjectAabb:
    def test_identity_centered(self):
        obj = SceneObject("o", Vec3(0, 0, 0), Vec3(0.1, 0.1, 0.1), Quat.identity())
        box = object_aabb(obj)
        assert np.allclose(box.lo.as_array(), [-0.05, -0.05, -0.05], atol=1e-12)
        assert np.allclose(box.hi.as_array(), [0.05, 0.05, 0.05], atol=1e-12)

    def test_rotated_slab_envelope(self):
        # 45 deg z-rotation of a unit slab: envelope grows to sqrt(2) in x,y
        q = Quat.from_axis_angle(Vec3(0, 0, 1), math.pi / 4)
        obj = SceneObject("o", Vec3(0, 0, 0), Vec3(1, 1, 0.1), q)
        box = object_aabb(obj)
        assert box.hi.x - box.lo.x == pytest.approx(math.sqrt(2), abs=1e-12)
        assert box.hi.y - box.lo.y == pytest.approx(math.sqrt(2), abs=1e-12)

    def test_translation(self):
        obj = SceneObject("o", Vec3(1, 2, 3), Vec3(0.2, 0.2, 0.2), Quat.identity())
        box = object_aabb(obj)
        assert np.allclose(box.center().as_array(), [1, 2, 3], atol=1e-12)

    def test_envelope_contains_all_corners(self):
        rng = np.random.default_rng(9)
        for _ in range(25):
            q = Quat.from_rpy(*rng.uniform(-math.pi, math.pi, 3))
            obj = SceneObject("o", Vec3(*rng.uniform(-1, 1, 3)), Vec3(*rng.uniform(0.05, 0.5, 3)), q)
            box = object_aabb(obj)
            pose = obj.pose()
            hx, hy, hz = obj.scale.x / 2, obj.scale.y / 2, obj.scale.z / 2
            for sx in (-1, 1):
                for sy in (-1, 1):
                    for sz in (-1, 1):
                        corner = pose.transform_point(Vec3(sx * hx, sy * hy, sz * hz))
                        assert box.contains(corner, tol=1e-9)


def _scene() -> Scene:
    return load_scene(json.dumps(BASIC))


class TestAttachment:
    def test_no_attachment_unchanged(self):
        scene = _scene()
        out = apply_attachment(scene, AttachmentState(), 100, Pose.identity())
        assert out == scene

    def test_attached_object_rides_gripper(self):
        scene = _scene()
        # grasp offset: object 0.06 below the gripper point
        offset = Pose(Vec3(0, 0, -0.06), Quat.identity())
        att = AttachmentState().with_event(AttachmentEvent(1000, "attach", "a", offset))
        ee = Pose(Vec3(0.5, 0.1, 0.4), Quat.identity())
        out = apply_attachment(scene, att, 1500, ee)
        moved = out.object_by_id("a")
        assert np.allclose(moved.position.as_array(), [0.5, 0.1, 0.34], atol=1e-12)
        # everything else at rest
        assert out.object_by_id("b") == scene.object_by_id("b")

    def test_detached_object_rests_at_release(self):
        scene = _scene()
        offset = Pose(Vec3(0, 0, -0.06), Quat.identity())
        rest = Pose(Vec3(0.7, -0.1, 0.06), Quat.identity())
        att = (
            AttachmentState()
            .with_event(AttachmentEvent(1000, "attach", "a", offset))
            .with_event(AttachmentEvent(2000, "detach", "a", rest))
        )
        out = apply_attachment(scene, att, 3000, Pose(Vec3(0, 0, 0.9), Quat.identity()))
        assert np.allclose(out.object_by_id("a").position.as_array(), [0.7, -0.1, 0.06], atol=1e-12)

    def test_snapshots_between_events_identical(self):
        scene = _scene()
        offset = Pose(Vec3(0, 0, -0.06), Quat.identity())
        att = AttachmentState().with_event(AttachmentEvent(1000, "attach", "a", offset))
        ee = Pose(Vec3(0.5, 0.1, 0.4), Quat.identity())
        assert apply_attachment(scene, att, 1200, ee) == apply_attachment(scene, att, 1800, ee)

    def test_events_must_alternate(self):
        offset = Pose(Vec3(0, 0, 0), Quat.identity())
        att = AttachmentState().with_event(AttachmentEvent(1000, "attach", "a", offset))
        with pytest.raises(ValueError):
            att.with_event(AttachmentEvent(2000, "attach", "b", offset))

    def test_held_at_boundaries(self):
        offset = Pose(Vec3(0, 0, 0), Quat.identity())
        att = (
            AttachmentState()
            .with_event(AttachmentEvent(1000, "attach", "a", offset))
            .with_event(AttachmentEvent(2000, "detach", "a", offset))
        )
        assert att.held_at(999) is None
        assert att.held_at(1000) is not None
        assert att.held_at(1999) is not None
        assert att.held_at(2000) is None
