"""Serial-arm kinematics: forward kinematics, geometric Jacobian, and a
damped-least-squares inverse-kinematics solver.

The arm model is loaded from a versioned JSON document (``schema: 1``) so
other arms plug in without code changes. Chain element ``i`` connects link
``i`` to link ``i+1``: the frame of link ``i+1`` is the frame of link ``i``
composed with the element's fixed origin transform and, for revolute
elements, the rotation about its axis. Fixed elements (``"type": "fixed"``)
place tool-tip frames without adding a degree of freedom.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import Pose, Quat, Vec3

MODEL_SCHEMA = 1


class ModelError(Exception):
    """Invalid robot model document."""


class ModelMismatchError(Exception):
    """Joint vector length does not match the model."""


class UnreachableError(Exception):
    """IK could not reach the target within tolerance."""

    def __init__(self, message: str, best_pos_error: float, best_dir_error_deg: float | None = None):
        super().__init__(message)
        self.best_pos_error = best_pos_error
        self.best_dir_error_deg = best_dir_error_deg


@dataclass(frozen=True)
class JointSpec:
    name: str
    axis: Vec3
    origin: Pose
    limits: tuple[float, float]
    kind: str = "revolute"  # "revolute" | "fixed"


@dataclass(frozen=True)
class Capsule:
    a: Vec3
    b: Vec3
    radius: float


@dataclass(frozen=True)
class LinkSpec:
    name: str
    capsule: Capsule


@dataclass(frozen=True)
class RobotModel:
    name: str
    joints: tuple[JointSpec, ...]
    links: tuple[LinkSpec, ...]
    ee_link: str
    finger_axis: Vec3  # local to the end-effector link
    home: tuple[float, ...] = field(default=())

    @property
    def dof(self) -> int:
        return sum(1 for j in self.joints if j.kind == "revolute")

    @property
    def link_names(self) -> list[str]:
        return [l.name for l in self.links]

    def reach_bound(self) -> float:
        """Conservative reach: sum of chain origin translation lengths."""
        return sum(j.origin.position.norm() for j in self.joints)

    def lower_limits(self) -> np.ndarray:
        return np.array([j.limits[0] for j in self.joints if j.kind == "revolute"])

    def upper_limits(self) -> np.ndarray:
        return np.array([j.limits[1] for j in self.joints if j.kind == "revolute"])

    def home_q(self) -> np.ndarray:
        if self.home:
            return np.array(self.home, dtype=float)
        return np.zeros(self.dof)

    def adjacent_pairs(self) -> set[frozenset[str]]:
        """Consecutive-link name pairs, excluded from proximity reporting."""
        names = self.link_names
        return {frozenset((names[i], names[i + 1])) for i in range(len(names) - 1)}


def load_model(document: str | dict) -> RobotModel:
    """Parse a robot model document (JSON text or decoded dict)."""
    if isinstance(document, str):
        try:
            doc = json.loads(document)
        except json.JSONDecodeError as e:
            raise ModelError(f"malformed model document: {e}") from e
    else:
        doc = document
    if doc.get("schema") != MODEL_SCHEMA:
        raise ModelError(f"unsupported model schema: {doc.get('schema')!r}")
    joints = []
    for j in doc["joints"]:
        kind = j.get("type", "revolute")
        if kind not in ("revolute", "fixed"):
            raise ModelError(f"joint {j['name']}: unknown type {kind!r}")
        xyz = j.get("origin", {}).get("xyz", [0, 0, 0])
        rpy = j.get("origin", {}).get("rpy", [0, 0, 0])
        if kind == "revolute":
            lo, hi = j["limits"]
            if not lo < hi:
                raise ModelError(f"joint {j['name']}: limits must satisfy lower < upper")
            axis = Vec3(*j["axis"]).normalized()
        else:
            lo, hi = 0.0, 0.0
            axis = Vec3(0, 0, 1)
        joints.append(
            JointSpec(
                name=j["name"],
                axis=axis,
                origin=Pose(Vec3(*xyz), Quat.from_rpy(*rpy)),
                limits=(float(lo), float(hi)),
                kind=kind,
            )
        )
    links = []
    for l in doc["links"]:
        cap = l["capsule"]
        if cap["radius"] <= 0:
            raise ModelError(f"link {l['name']}: capsule radius must be > 0")
        links.append(
            LinkSpec(
                name=l["name"],
                capsule=Capsule(Vec3(*cap["a"]), Vec3(*cap["b"]), float(cap["radius"])),
            )
        )
    if len(links) != len(joints) + 1:
        raise ModelError(f"expected {len(joints) + 1} links for {len(joints)} chain elements, got {len(links)}")
    ee = doc["end_effector"]
    names = [l.name for l in links]
    if ee["link"] not in names:
        raise ModelError(f"end-effector link {ee['link']!r} not among links")
    model = RobotModel(
        name=doc.get("name", "robot"),
        joints=tuple(joints),
        links=tuple(links),
        ee_link=ee["link"],
        finger_axis=Vec3(*ee["finger_axis"]).normalized(),
        home=tuple(float(v) for v in doc.get("home", [])),
    )
    if model.home and len(model.home) != model.dof:
        raise ModelError("home configuration length does not match joint count")
    return model


def load_model_file(path: str | Path) -> RobotModel:
    return load_model(Path(path).read_text())


def _check_q(model: RobotModel, q) -> np.ndarray:
    arr = np.asarray(q, dtype=float)
    if arr.shape != (model.dof,):
        raise ModelMismatchError(f"expected {model.dof} joint values, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ModelMismatchError("joint vector contains non-finite values")
    return arr


def forward_kinematics(model: RobotModel, q, base_pose: Pose | None = None) -> dict[str, Pose]:
    """World pose of every link; the base link sits at ``base_pose``."""
    arr = _check_q(model, q)
    pose = base_pose if base_pose is not None else Pose.identity()
    frames = {model.links[0].name: pose}
    qi = 0
    for i, joint in enumerate(model.joints):
        pose = pose.compose(joint.origin)
        if joint.kind == "revolute":
            pose = pose.compose(Pose(Vec3(0, 0, 0), Quat.from_axis_angle(joint.axis, arr[qi])))
            qi += 1
        frames[model.links[i + 1].name] = Pose(pose.position, pose.orientation.normalized())
    return frames


def jacobian(model: RobotModel, q, base_pose: Pose | None = None) -> np.ndarray:
    """6 x n geometric Jacobian of the end-effector (linear rows then angular)."""
    arr = _check_q(model, q)
    pose = base_pose if base_pose is not None else Pose.identity()
    axes = []
    origins = []
    ee_pos = pose.position.as_array()
    qi = 0
    for i, joint in enumerate(model.joints):
        pose = pose.compose(joint.origin)
        if joint.kind == "revolute":
            axes.append(pose.transform_dir(joint.axis).as_array())
            origins.append(pose.position.as_array())
            pose = pose.compose(Pose(Vec3(0, 0, 0), Quat.from_axis_angle(joint.axis, arr[qi])))
            qi += 1
        if model.links[i + 1].name == model.ee_link:
            ee_pos = pose.position.as_array()
    J = np.zeros((6, model.dof))
    for j in range(model.dof):
        w = axes[j]
        J[:3, j] = np.cross(w, ee_pos - origins[j])
        J[3:, j] = w
    return J


def ee_pose(model: RobotModel, q, base_pose: Pose | None = None) -> Pose:
    return forward_kinematics(model, q, base_pose)[model.ee_link]


def world_finger_axis(model: RobotModel, ee: Pose) -> Vec3:
    return ee.transform_dir(model.finger_axis)


def solve_ik(
    model: RobotModel,
    target_pos: Vec3,
    target_dir: Vec3 | None,
    seed,
    base_pose: Pose | None = None,
    pos_tol: float = 1e-3,
    dir_tol_deg: float = 2.0,
    max_iters: int = 200,
) -> np.ndarray:
    """Damped-least-squares IK for the end-effector position (and optionally
    its finger-axis direction). Joint limits are clamped every iteration; a
    solve that cannot reach tolerance raises ``UnreachableError`` carrying
    the best error achieved.
    """
    q = _check_q(model, seed).copy()
    base = base_pose if base_pose is not None else Pose.identity()
    if (target_pos - base.position).norm() > model.reach_bound():
        raise UnreachableError(
            f"target ({target_pos.x:.3f}, {target_pos.y:.3f}, {target_pos.z:.3f}) "
            f"beyond reach bound {model.reach_bound():.3f} m",
            best_pos_error=math.inf,
        )
    tgt = target_pos.as_array()
    tdir = target_dir.normalized().as_array() if target_dir is not None else None
    lo = model.lower_limits()
    hi = model.upper_limits()
    cos_tol = math.cos(math.radians(dir_tol_deg))
    lam = 0.05

    def residual(qv):
        ee = forward_kinematics(model, qv, base)[model.ee_link]
        pos_err = tgt - ee.position.as_array()
        if tdir is None:
            return pos_err, float(np.linalg.norm(pos_err)), None
        f = ee.transform_dir(model.finger_axis).as_array()
        cos_a = float(np.clip(np.dot(f, tdir), -1.0, 1.0))
        rot = np.cross(f, tdir)
        if cos_a < -0.99:  # near-antipodal: any perpendicular axis unsticks it
            perp = np.cross(f, [1.0, 0.0, 0.0])
            if np.linalg.norm(perp) < 1e-6:
                perp = np.cross(f, [0.0, 1.0, 0.0])
            rot = perp / np.linalg.norm(perp)
        return np.concatenate([pos_err, rot]), float(np.linalg.norm(pos_err)), cos_a

    def converged(pe, ca):
        return pe < pos_tol and (tdir is None or ca >= cos_tol)

    err_vec, pos_err, cos_a = residual(q)
    best_pos, best_cos = pos_err, cos_a
    if converged(pos_err, cos_a):
        return q
    for _ in range(max_iters):
        J = jacobian(model, q, base)
        task = J if tdir is not None else J[:3, :]
        JT = task.T
        step = JT @ np.linalg.solve(task @ JT + (lam**2) * np.eye(task.shape[0]), err_vec)
        max_step = float(np.max(np.abs(step)))
        if max_step > 0.5:
            step *= 0.5 / max_step
        q_new = np.clip(q + step, lo, hi)
        new_vec, new_pos, new_cos = residual(q_new)
        if float(np.dot(new_vec, new_vec)) < float(np.dot(err_vec, err_vec)):
            q, err_vec, pos_err, cos_a = q_new, new_vec, new_pos, new_cos
            lam = max(lam / 2.0, 1e-4)
            best_pos = min(best_pos, pos_err)
            if cos_a is not None and (best_cos is None or cos_a > best_cos):
                best_cos = cos_a
            if converged(pos_err, cos_a):
                return q
        else:
            lam = min(lam * 2.0, 1e3)
    raise UnreachableError(
        f"IK did not converge within {max_iters} iterations "
        f"(best position error {best_pos:.4g} m)",
        best_pos_error=best_pos,
        best_dir_error_deg=None if best_cos is None else math.degrees(math.acos(max(-1.0, min(1.0, best_cos)))),
    )
