// View-model for one UI session: everything the panels render derives from
// this state, and every mutation happens through explicit user actions.

import type { CriticReport, Flag, ScoreDoc, TrajectoryPayload } from './api.js';

export interface ChatEntry {
  role: 'user' | 'assistant' | 'error';
  text: string;
  program?: string;
}

export interface PendingDiff {
  critic: string;
  oldProgram: string;
  newProgram: string;
}

export interface TerminalLine {
  kind: 'report' | 'info' | 'error';
  flag?: Flag;
  critic?: string;
  text: string;
}

export class UiSession {
  sessionId = '';
  transcript: ChatEntry[] = [];
  program = '';
  errorLine: number | null = null;
  toggles = new Map<string, boolean>();
  latestReports: CriticReport[] = [];
  score: ScoreDoc | null = null;
  terminal: TerminalLine[] = [];
  runInFlight = false;
  chatInFlight = false;
  pendingDiff: PendingDiff | null = null;
  trajectory: TrajectoryPayload | null = null;
  cursor = 0;

  constructor(criticNames: string[]) {
    for (const name of criticNames) this.toggles.set(name, true);
  }

  selectedCritics(): string[] {
    return [...this.toggles.entries()].filter(([, on]) => on).map(([name]) => name);
  }

  setToggle(critic: string, on: boolean): void {
    if (this.toggles.has(critic)) this.toggles.set(critic, on);
  }

  canSend(message: string): boolean {
    return message.trim().length > 0 && !this.chatInFlight;
  }

  canRun(): boolean {
    return this.program.trim().length > 0 && !this.runInFlight;
  }

  latestReport(critic: string): CriticReport | undefined {
    return this.latestReports.find((r) => r.critic === critic);
  }

  // Fix is available exactly when the critic's latest flag is not OK.
  fixEnabled(critic: string): boolean {
    const report = this.latestReport(critic);
    return report !== undefined && report.flag !== 'OK';
  }

  applyChat(message: string, program: string, explanation: string): void {
    this.transcript.push({ role: 'user', text: message });
    this.transcript.push({ role: 'assistant', text: explanation, program });
    this.program = program;
    this.errorLine = null;
  }

  applyChatError(message: string, error: string): void {
    this.transcript.push({ role: 'user', text: message });
    this.transcript.push({ role: 'error', text: error });
  }

  applyRun(reports: CriticReport[], score: ScoreDoc | null, trajectory: TrajectoryPayload): void {
    this.latestReports = reports;
    this.score = score;
    this.trajectory = trajectory;
    this.cursor = 0;
    this.errorLine = null;
    this.terminal = reports.map((r) => ({
      kind: 'report',
      flag: r.flag,
      critic: r.critic,
      text: reportLine(r),
    }));
  }

  applyRunError(error: string, line: number | null): void {
    this.errorLine = line;
    this.terminal = [{ kind: 'error', text: line === null ? error : `${error} (line ${line})` }];
  }

  openDiff(critic: string, revised: string): void {
    this.pendingDiff = { critic, oldProgram: this.program, newProgram: revised };
  }

  // Explicit user approval: only acceptance makes the revision current, and
  // the user still has to re-run it.
  acceptDiff(): void {
    if (this.pendingDiff) {
      this.program = this.pendingDiff.newProgram;
      this.pendingDiff = null;
    }
  }

  rejectDiff(): void {
    this.pendingDiff = null;
  }

  stateCount(): number {
    return this.trajectory?.states.length ?? 0;
  }

  setCursor(index: number): void {
    const n = this.stateCount();
    this.cursor = n === 0 ? 0 : Math.max(0, Math.min(n - 1, Math.round(index)));
  }

  cursorTime(): number {
    const states = this.trajectory?.states;
    return states && states.length ? states[this.cursor].t_ms : 0;
  }

  // Slider tick marks: the extremum timestep of every non-OK report.
  flaggedTicks(): { critic: string; t_ms: number }[] {
    return this.latestReports
      .filter((r) => r.flag !== 'OK' && r.measurement?.t_ms != null)
      .map((r) => ({ critic: r.critic, t_ms: r.measurement!.t_ms! }));
  }
}

export function reportLine(r: CriticReport): string {
  let text = `${r.critic}: ${r.flag}`;
  if (r.measurement !== null) {
    const at = r.measurement.t_ms != null ? ` at t=${r.measurement.t_ms}ms` : '';
    text += ` (${formatValue(r.measurement.value)} ${r.measurement.unit}${at})`;
  }
  if (r.flag !== 'OK') text += ` — ${r.explanation} ${r.fix_hint}`;
  return text;
}

function formatValue(v: number): string {
  return Math.abs(v) >= 100 ? v.toFixed(0) : v.toPrecision(3);
}

// Minimal line diff (LCS) for the side-by-side review of a proposed fix.
export interface DiffRow {
  kind: 'same' | 'added' | 'removed';
  text: string;
}

export function lineDiff(oldText: string, newText: string): DiffRow[] {
  const a = oldText.split('\n');
  const b = newText.split('\n');
  const n = a.length;
  const m = b.length;
  const lcs: number[][] = Array.from({ length: n + 1 }, () => new Array(m + 1).fill(0));
  for (let i = n - 1; i >= 0; i--) {
    for (let j = m - 1; j >= 0; j--) {
      lcs[i][j] = a[i] === b[j] ? lcs[i + 1][j + 1] + 1 : Math.max(lcs[i + 1][j], lcs[i][j + 1]);
    }
  }
  const rows: DiffRow[] = [];
  let i = 0;
  let j = 0;
  while (i < n && j < m) {
    if (a[i] === b[j]) {
      rows.push({ kind: 'same', text: a[i] });
      i++;
      j++;
    } else if (lcs[i + 1][j] >= lcs[i][j + 1]) {
      rows.push({ kind: 'removed', text: a[i] });
      i++;
    } else {
      rows.push({ kind: 'added', text: b[j] });
      j++;
    }
  }
  while (i < n) rows.push({ kind: 'removed', text: a[i++] });
  while (j < m) rows.push({ kind: 'added', text: b[j++] });
  return rows;
}
