import { describe, expect, it } from 'vitest';

import type { CriticReport, TrajectoryPayload } from '../src/api.js';
import { UiSession, lineDiff, reportLine } from '../src/state.js';

const CRITICS = ['space_usage', 'collision', 'joint_speed', 'ee_pose', 'pinch_point'];

function report(critic: string, flag: CriticReport['flag'], t_ms: number | null = 100): CriticReport {
  return {
    critic,
    flag,
    explanation: flag === 'OK' ? '' : 'something is off.',
    fix_hint: flag === 'OK' ? '' : 'fix it.',
    measurement: flag === 'OK' ? null : { value: 1.5, unit: 'm/s', t_ms },
    thresholds: {},
  };
}

function trajectoryStub(times: number[]): TrajectoryPayload {
  return {
    states: times.map((t) => ({
      t_ms: t,
      q: [0],
      frames: { base: { p: [0, 0, 0], o: [0, 0, 0, 1] }, ee: { p: [0.1, 0, 0], o: [0, 0, 0, 1] } },
      proximity: {},
      gripper_open: true,
    })),
    attachment: [],
    reports: [],
    score: null,
    links: ['base', 'ee'],
    scene: { objects: [], workspace: { min: [-1, -1, 0], max: [1, 1, 1] } },
  };
}

describe('UiSession', () => {
  it('enables Fix exactly for non-OK critics', () => {
    const s = new UiSession(CRITICS);
    s.applyRun(
      [report('joint_speed', 'Warning'), report('collision', 'OK'), report('ee_pose', 'Error')],
      null,
      trajectoryStub([0, 50]),
    );
    expect(s.fixEnabled('joint_speed')).toBe(true);
    expect(s.fixEnabled('ee_pose')).toBe(true);
    expect(s.fixEnabled('collision')).toBe(false);
    expect(s.fixEnabled('space_usage')).toBe(false); // no report at all
  });

  it('terminal lines mirror exactly the reports that ran', () => {
    const s = new UiSession(CRITICS);
    s.setToggle('collision', false);
    const selected = s.selectedCritics();
    expect(selected).not.toContain('collision');
    s.applyRun(selected.map((c) => report(c, 'OK', null)), null, trajectoryStub([0, 50]));
    expect(s.terminal.map((l) => l.critic)).toEqual(selected);
  });

  it('run gating: disabled while in flight or without a program', () => {
    const s = new UiSession(CRITICS);
    expect(s.canRun()).toBe(false);
    s.program = 'open_gripper()';
    expect(s.canRun()).toBe(true);
    s.runInFlight = true;
    expect(s.canRun()).toBe(false);
  });

  it('send gating: empty message disabled', () => {
    const s = new UiSession(CRITICS);
    expect(s.canSend('   ')).toBe(false);
    expect(s.canSend('do a thing')).toBe(true);
  });

  it('diff must be explicitly accepted', () => {
    const s = new UiSession(CRITICS);
    s.program = 'move_to(0.3, 0, 0.2)';
    s.openDiff('joint_speed', 'reduce_speed(40)\nmove_to(0.3, 0, 0.2)');
    expect(s.program).toBe('move_to(0.3, 0, 0.2)');
    s.rejectDiff();
    expect(s.program).toBe('move_to(0.3, 0, 0.2)');
    s.openDiff('joint_speed', 'reduce_speed(40)\nmove_to(0.3, 0, 0.2)');
    s.acceptDiff();
    expect(s.program).toContain('reduce_speed(40)');
    expect(s.pendingDiff).toBeNull();
  });

  it('cursor clamps to the state range', () => {
    const s = new UiSession(CRITICS);
    s.applyRun([], null, trajectoryStub([0, 50, 100]));
    s.setCursor(-3);
    expect(s.cursor).toBe(0);
    s.setCursor(99);
    expect(s.cursor).toBe(2);
    expect(s.cursorTime()).toBe(100);
  });

  it('ticks come from non-OK extrema only', () => {
    const s = new UiSession(CRITICS);
    s.applyRun(
      [report('joint_speed', 'Warning', 150), report('collision', 'OK'), report('ee_pose', 'Error', 300)],
      null,
      trajectoryStub([0, 150, 300]),
    );
    expect(s.flaggedTicks()).toEqual([
      { critic: 'joint_speed', t_ms: 150 },
      { critic: 'ee_pose', t_ms: 300 },
    ]);
  });

  it('run errors surface the offending line', () => {
    const s = new UiSession(CRITICS);
    s.applyRunError('unknown command', 2);
    expect(s.errorLine).toBe(2);
    expect(s.terminal[0].text).toContain('line 2');
  });
});

describe('reportLine', () => {
  it('includes flag, measurement and hint for violations', () => {
    const text = reportLine(report('joint_speed', 'Warning', 150));
    expect(text).toContain('joint_speed: Warning');
    expect(text).toContain('1.50 m/s');
    expect(text).toContain('fix it.');
  });
});

describe('lineDiff', () => {
  it('classifies an inserted line as added', () => {
    const rows = lineDiff('a()\nb()', 'reduce_speed(40)\na()\nb()');
    expect(rows).toEqual([
      { kind: 'added', text: 'reduce_speed(40)' },
      { kind: 'same', text: 'a()' },
      { kind: 'same', text: 'b()' },
    ]);
  });

  it('classifies removals and changes', () => {
    const rows = lineDiff('a()\nx()\nb()', 'a()\ny()\nb()');
    expect(rows.filter((r) => r.kind === 'removed')).toEqual([{ kind: 'removed', text: 'x()' }]);
    expect(rows.filter((r) => r.kind === 'added')).toEqual([{ kind: 'added', text: 'y()' }]);
  });
});
