// Pose math and projection helpers for the trajectory playback views: the
// arm is drawn as its link chain, objects as boxes at attachment-adjusted
// poses, in two orthographic projections (top: x/y, side: x/z).

import type { AttachmentEventDoc, PoseDoc, SceneObjectDoc, StateDoc, TrajectoryPayload } from './api.js';

export type Vec = [number, number, number];
export type Quat = [number, number, number, number]; // x, y, z, w

export function quatRotate(q: Quat, v: Vec): Vec {
  const [qx, qy, qz, qw] = q;
  // uv = q.xyz × v; uuv = q.xyz × uv; v' = v + 2w·uv + 2·uuv
  const ux = qy * v[2] - qz * v[1];
  const uy = qz * v[0] - qx * v[2];
  const uz = qx * v[1] - qy * v[0];
  const uux = qy * uz - qz * uy;
  const uuy = qz * ux - qx * uz;
  const uuz = qx * uy - qy * ux;
  return [v[0] + 2 * qw * ux + 2 * uux, v[1] + 2 * qw * uy + 2 * uuy, v[2] + 2 * qw * uz + 2 * uuz];
}

export function quatMul(a: Quat, b: Quat): Quat {
  const [ax, ay, az, aw] = a;
  const [bx, by, bz, bw] = b;
  return [
    aw * bx + ax * bw + ay * bz - az * by,
    aw * by - ax * bz + ay * bw + az * bx,
    aw * bz + ax * by - ay * bx + az * bw,
    aw * bw - ax * bx - ay * by - az * bz,
  ];
}

export function composePose(a: PoseDoc, b: PoseDoc): PoseDoc {
  const rotated = quatRotate(a.o, b.p);
  return {
    p: [a.p[0] + rotated[0], a.p[1] + rotated[1], a.p[2] + rotated[2]],
    o: quatMul(a.o, b.o),
  };
}

export interface ObjectPose {
  id: string;
  kind: string;
  center: Vec;
  scale: Vec;
  held: boolean;
}

/** Object poses at a state, with the attachment timeline applied:
 * the held object rides the end-effector, released objects rest where
 * they were dropped. Mirrors the backend's snapshot semantics. */
export function objectPosesAt(payload: TrajectoryPayload, stateIndex: number): ObjectPose[] {
  const state = payload.states[stateIndex];
  const eeLink = payload.links[payload.links.length - 1];
  const ee = state.frames[eeLink];
  let held: AttachmentEventDoc | null = null;
  const rests = new Map<string, PoseDoc>();
  for (const ev of payload.attachment) {
    if (ev.t_ms > state.t_ms) break;
    if (ev.kind === 'attach') {
      held = ev;
    } else {
      rests.set(ev.object_id, ev.pose);
      held = null;
    }
  }
  return payload.scene.objects.map((obj: SceneObjectDoc) => {
    if (held && obj.id === held.object_id && ee) {
      const world = composePose(ee, held.pose);
      return { id: obj.id, kind: obj.kind, center: world.p, scale: obj.scale, held: true };
    }
    const rest = rests.get(obj.id);
    if (rest) {
      return { id: obj.id, kind: obj.kind, center: rest.p, scale: obj.scale, held: false };
    }
    return { id: obj.id, kind: obj.kind, center: obj.position, scale: obj.scale, held: false };
  });
}

/** Link-frame origins in chain order, for the arm polyline. */
export function armPolyline(state: StateDoc, links: string[]): Vec[] {
  return links.filter((l) => state.frames[l]).map((l) => state.frames[l].p);
}

export type ViewKind = 'top' | 'side';

/** Orthographic projection: top view is x/y, side view is x/z. */
export function project(view: ViewKind, p: Vec): [number, number] {
  return view === 'top' ? [p[0], p[1]] : [p[0], p[2]];
}

/** Playback pacing: maps wall time to a state index at 1x tau time. */
export class Player {
  private startedWallMs: number | null = null;
  private startedTrajMs = 0;

  constructor(private times: number[]) {}

  start(wallNowMs: number, fromIndex: number): void {
    this.startedWallMs = wallNowMs;
    this.startedTrajMs = this.times[fromIndex] ?? 0;
  }

  stop(): void {
    this.startedWallMs = null;
  }

  get playing(): boolean {
    return this.startedWallMs !== null;
  }

  /** State index for the current wall clock; null once past the end. */
  tick(wallNowMs: number): number | null {
    if (this.startedWallMs === null) return null;
    const t = this.startedTrajMs + (wallNowMs - this.startedWallMs);
    if (t >= this.times[this.times.length - 1]) {
      this.stop();
      return this.times.length - 1;
    }
    let index = 0;
    while (index + 1 < this.times.length && this.times[index + 1] <= t) index++;
    return index;
  }
}
