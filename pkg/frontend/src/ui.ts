// DOM application: chat panel, critic toggles with Fix buttons, terminal
// feed, run button, and trajectory playback with scrubbing. All state lives
// in the UiSession view-model; the server is only touched by explicit user
// actions (send, run, fix, accept + re-run).

import { ApiError, ServiceClient } from './api.js';
import { Player, armPolyline, objectPosesAt, project, type ViewKind } from './playback.js';
import { UiSession, lineDiff } from './state.js';

const SVG_NS = 'http://www.w3.org/2000/svg';

export class App {
  session!: UiSession;
  player: Player | null = null;
  private playTimer: ReturnType<typeof setInterval> | null = null;

  constructor(
    private root: HTMLElement,
    private client: ServiceClient,
    private doc: Document = document,
  ) {}

  async boot(scene = 'recycling.json'): Promise<void> {
    const { critics } = await this.client.listCritics();
    this.session = new UiSession(critics);
    this.session.sessionId = await this.client.createSession(scene);
    this.buildLayout(critics);
    this.render();
  }

  // ------------------------------------------------------------------ layout

  private el<K extends keyof HTMLElementTagNameMap>(
    tag: K,
    attrs: Record<string, string> = {},
    text = '',
  ): HTMLElementTagNameMap[K] {
    const node = this.doc.createElement(tag);
    for (const [k, v] of Object.entries(attrs)) node.setAttribute(k, v);
    if (text) node.textContent = text;
    return node;
  }

  private buildLayout(critics: string[]): void {
    this.root.innerHTML = '';

    // left: chat
    const chat = this.el('section', { id: 'chat-panel' });
    chat.append(this.el('h2', {}, 'Chat'));
    chat.append(this.el('div', { id: 'chat-log' }));
    const form = this.el('div', { id: 'chat-form' });
    const input = this.el('input', { id: 'chat-input', placeholder: 'Describe a task…' });
    const send = this.el('button', { id: 'chat-send' }, 'Send');
    form.append(input, send);
    chat.append(form);

    // center: program + critics + terminal
    const center = this.el('section', { id: 'center-panel' });
    center.append(this.el('h2', {}, 'Program'));
    center.append(this.el('div', { id: 'program-view' }));
    const criticsPanel = this.el('div', { id: 'critic-panel' });
    for (const name of critics) {
      const row = this.el('div', { class: 'critic-row', 'data-critic': name });
      const label = this.el('label');
      const toggle = this.el('input', { type: 'checkbox', class: 'toggle' }) as HTMLInputElement;
      toggle.checked = true;
      toggle.addEventListener('change', () => {
        this.session.setToggle(name, toggle.checked);
        this.render();
      });
      label.append(toggle, this.doc.createTextNode(` ${name}`));
      const chip = this.el('span', { class: 'flag-chip' });
      const fixBtn = this.el('button', { class: 'fix-btn' }, 'Fix');
      fixBtn.addEventListener('click', () => void this.onFix(name));
      row.append(label, chip, fixBtn);
      criticsPanel.append(row);
    }
    const runBtn = this.el('button', { id: 'run-btn' }, 'Run Code');
    runBtn.addEventListener('click', () => void this.onRun());
    const scoreBadge = this.el('span', { id: 'score-badge' });
    const runRow = this.el('div', { id: 'run-row' });
    runRow.append(runBtn, scoreBadge);
    center.append(criticsPanel, runRow);
    center.append(this.el('h2', {}, 'Terminal'));
    center.append(this.el('div', { id: 'terminal' }));

    // right: playback
    const playback = this.el('section', { id: 'playback-panel' });
    playback.append(this.el('h2', {}, 'Simulation'));
    for (const view of ['top', 'side'] as ViewKind[]) {
      const svg = this.doc.createElementNS(SVG_NS, 'svg');
      svg.setAttribute('id', `view-${view}`);
      svg.setAttribute('class', 'view');
      playback.append(svg as unknown as HTMLElement);
    }
    const scrubRow = this.el('div', { id: 'scrub-row' });
    const playBtn = this.el('button', { id: 'play-btn' }, 'Play');
    playBtn.addEventListener('click', () => this.onPlay());
    const scrub = this.el('input', {
      id: 'scrub',
      type: 'range',
      min: '0',
      max: '0',
      value: '0',
    }) as HTMLInputElement;
    scrub.addEventListener('input', () => {
      this.session.setCursor(Number(scrub.value));
      this.renderPlayback();
    });
    const ticks = this.el('div', { id: 'scrub-ticks' });
    const clock = this.el('span', { id: 'scrub-time' });
    scrubRow.append(playBtn, scrub, clock);
    playback.append(scrubRow, ticks);

    // diff modal (hidden until a fix is proposed)
    const modal = this.el('div', { id: 'diff-modal', hidden: '' });
    modal.append(this.el('h3', {}, 'Proposed fix'));
    const cols = this.el('div', { id: 'diff-cols' });
    cols.append(this.el('pre', { id: 'diff-old' }), this.el('pre', { id: 'diff-new' }));
    const accept = this.el('button', { id: 'diff-accept' }, 'Accept');
    accept.addEventListener('click', () => {
      this.session.acceptDiff();
      this.render();
    });
    const reject = this.el('button', { id: 'diff-reject' }, 'Reject');
    reject.addEventListener('click', () => {
      this.session.rejectDiff();
      this.render();
    });
    modal.append(cols, accept, reject);

    send.addEventListener('click', () => void this.onSend());
    input.addEventListener('input', () => this.renderChatControls());
    input.addEventListener('keydown', (ev) => {
      if ((ev as KeyboardEvent).key === 'Enter') void this.onSend();
    });

    this.root.append(chat, center, playback, modal);
  }

  // ------------------------------------------------------------------ actions

  private input(): HTMLInputElement {
    return this.root.querySelector('#chat-input') as HTMLInputElement;
  }

  async onSend(): Promise<void> {
    const message = this.input().value;
    if (!this.session.canSend(message)) return;
    this.session.chatInFlight = true;
    this.renderChatControls();
    try {
      const out = await this.client.chat(this.session.sessionId, message);
      this.session.applyChat(message, out.program, out.explanation);
      this.input().value = '';
    } catch (e) {
      this.session.applyChatError(message, e instanceof ApiError ? e.message : String(e));
    } finally {
      this.session.chatInFlight = false;
      this.render();
    }
  }

  async onRun(): Promise<void> {
    if (!this.session.canRun()) return;
    this.session.runInFlight = true;
    this.render();
    try {
      const out = await this.client.run(
        this.session.sessionId,
        this.session.program,
        this.session.selectedCritics(),
      );
      const traj = await this.client.trajectory(this.session.sessionId, out.trajectory_id);
      this.session.applyRun(out.reports, out.score, traj);
    } catch (e) {
      if (e instanceof ApiError) {
        this.session.applyRunError(e.body.error ?? e.message, (e.body.line as number | null) ?? null);
      } else {
        this.session.applyRunError(String(e), null);
      }
    } finally {
      this.session.runInFlight = false;
      this.render();
    }
  }

  async onFix(critic: string): Promise<void> {
    if (!this.session.fixEnabled(critic)) return;
    try {
      const revised = await this.client.fix(this.session.sessionId, critic);
      this.session.openDiff(critic, revised);
    } catch (e) {
      const message =
        e instanceof ApiError && e.status === 409
          ? `${critic}: no violation to fix`
          : `${critic}: fix failed (${e instanceof Error ? e.message : e})`;
      this.session.terminal.push({ kind: 'error', text: message });
    }
    this.render();
  }

  onPlay(): void {
    const traj = this.session.trajectory;
    if (!traj || traj.states.length < 2) return;
    if (this.playTimer) {
      this.stopPlayback();
      return;
    }
    const start =
      this.session.cursor >= traj.states.length - 1 ? 0 : this.session.cursor;
    this.player = new Player(traj.states.map((s) => s.t_ms));
    this.player.start(Date.now(), start);
    this.playTimer = setInterval(() => {
      const index = this.player?.tick(Date.now());
      if (index === null || index === undefined) {
        this.stopPlayback();
        return;
      }
      this.session.setCursor(index);
      this.renderPlayback();
      if (!this.player?.playing) this.stopPlayback();
    }, 40);
    this.renderPlayback();
  }

  private stopPlayback(): void {
    if (this.playTimer) clearInterval(this.playTimer);
    this.playTimer = null;
    this.player?.stop();
    this.renderPlayback();
  }

  // ------------------------------------------------------------------ render

  render(): void {
    this.renderChat();
    this.renderChatControls();
    this.renderProgram();
    this.renderCritics();
    this.renderTerminal();
    this.renderDiff();
    this.renderPlayback();
  }

  private renderChat(): void {
    const log = this.root.querySelector('#chat-log') as HTMLElement;
    log.innerHTML = '';
    for (const entry of this.session.transcript) {
      const div = this.el('div', { class: `chat-entry chat-${entry.role}` });
      div.append(this.el('p', {}, entry.text));
      if (entry.program !== undefined) {
        const pre = this.el('pre', { class: 'chat-program' });
        entry.program.split('\n').forEach((line, i) => {
          const row = this.el('div', { class: 'code-line', 'data-line': String(i + 1) });
          row.append(this.el('span', { class: 'line-no' }, String(i + 1)));
          row.append(this.el('span', { class: 'line-text' }, line));
          pre.append(row);
        });
        div.append(pre);
      }
      log.append(div);
    }
  }

  private renderChatControls(): void {
    const send = this.root.querySelector('#chat-send') as HTMLButtonElement;
    send.disabled = !this.session.canSend(this.input().value);
  }

  private renderProgram(): void {
    const view = this.root.querySelector('#program-view') as HTMLElement;
    view.innerHTML = '';
    this.session.program.split('\n').forEach((line, i) => {
      const lineno = i + 1;
      const classes = ['code-line'];
      if (this.session.errorLine === lineno) classes.push('error-line');
      const row = this.el('div', { class: classes.join(' '), 'data-line': String(lineno) });
      row.append(this.el('span', { class: 'line-no' }, String(lineno)));
      row.append(this.el('span', { class: 'line-text' }, line));
      view.append(row);
    });
  }

  private renderCritics(): void {
    for (const [name, on] of this.session.toggles) {
      const row = this.root.querySelector(`.critic-row[data-critic="${name}"]`) as HTMLElement;
      const toggle = row.querySelector('.toggle') as HTMLInputElement;
      toggle.checked = on;
      const chip = row.querySelector('.flag-chip') as HTMLElement;
      const report = this.session.latestReport(name);
      chip.textContent = report ? report.flag : '';
      chip.setAttribute('data-flag', report ? report.flag : '');
      const fixBtn = row.querySelector('.fix-btn') as HTMLButtonElement;
      fixBtn.disabled = !this.session.fixEnabled(name);
    }
    const runBtn = this.root.querySelector('#run-btn') as HTMLButtonElement;
    runBtn.disabled = !this.session.canRun();
    const badge = this.root.querySelector('#score-badge') as HTMLElement;
    badge.textContent = this.session.score ? `${this.session.score.total}/10` : '';
  }

  private renderTerminal(): void {
    const terminal = this.root.querySelector('#terminal') as HTMLElement;
    terminal.innerHTML = '';
    for (const line of this.session.terminal) {
      const div = this.el(
        'div',
        { class: `terminal-line terminal-${line.kind}`, 'data-flag': line.flag ?? '' },
        line.text,
      );
      if (line.critic) div.setAttribute('data-critic', line.critic);
      terminal.append(div);
    }
  }

  private renderDiff(): void {
    const modal = this.root.querySelector('#diff-modal') as HTMLElement;
    const diff = this.session.pendingDiff;
    if (!diff) {
      modal.setAttribute('hidden', '');
      return;
    }
    modal.removeAttribute('hidden');
    const oldPane = this.root.querySelector('#diff-old') as HTMLElement;
    const newPane = this.root.querySelector('#diff-new') as HTMLElement;
    oldPane.innerHTML = '';
    newPane.innerHTML = '';
    for (const row of lineDiff(diff.oldProgram, diff.newProgram)) {
      if (row.kind !== 'added') {
        oldPane.append(this.el('div', { class: `diff-line diff-${row.kind}` }, row.text));
      }
      if (row.kind !== 'removed') {
        newPane.append(this.el('div', { class: `diff-line diff-${row.kind}` }, row.text));
      }
    }
  }

  renderPlayback(): void {
    const traj = this.session.trajectory;
    const scrub = this.root.querySelector('#scrub') as HTMLInputElement;
    const clock = this.root.querySelector('#scrub-time') as HTMLElement;
    const playBtn = this.root.querySelector('#play-btn') as HTMLButtonElement;
    playBtn.textContent = this.playTimer ? 'Pause' : 'Play';
    if (!traj || traj.states.length === 0) {
      scrub.max = '0';
      clock.textContent = '';
      return;
    }
    scrub.max = String(traj.states.length - 1);
    scrub.value = String(this.session.cursor);
    clock.textContent = `t = ${this.session.cursorTime()} ms`;
    this.renderTicks(traj.states[traj.states.length - 1].t_ms);
    for (const view of ['top', 'side'] as ViewKind[]) {
      this.drawView(view);
    }
  }

  private renderTicks(totalMs: number): void {
    const box = this.root.querySelector('#scrub-ticks') as HTMLElement;
    box.innerHTML = '';
    const cursorT = this.session.cursorTime();
    for (const tick of this.session.flaggedTicks()) {
      const el = this.el('span', {
        class: `tick${tick.t_ms === cursorT ? ' active' : ''}`,
        'data-critic': tick.critic,
        title: `${tick.critic} extremum`,
      });
      el.style.left = `${totalMs ? (tick.t_ms / totalMs) * 100 : 0}%`;
      box.append(el);
    }
  }

  private drawView(view: ViewKind): void {
    const traj = this.session.trajectory;
    if (!traj) return;
    const svg = this.root.querySelector(`#view-${view}`) as SVGSVGElement;
    const ws = traj.scene.workspace;
    const [minU, minV] =
      view === 'top' ? [ws.min[0], ws.min[1]] : [ws.min[0], ws.min[2]];
    const [maxU, maxV] =
      view === 'top' ? [ws.max[0], ws.max[1]] : [ws.max[0], ws.max[2]];
    // y grows downward in SVG: flip v
    const h = maxV - minV;
    svg.setAttribute('viewBox', `${minU} 0 ${maxU - minU} ${h}`);
    const mapV = (v: number) => maxV - v;
    svg.innerHTML = '';

    for (const obj of objectPosesAt(traj, this.session.cursor)) {
      const [cu, cv] = project(view, obj.center);
      const [su, sv] =
        view === 'top' ? [obj.scale[0], obj.scale[1]] : [obj.scale[0], obj.scale[2]];
      const rect = this.doc.createElementNS(SVG_NS, 'rect');
      rect.setAttribute('class', `object${obj.held ? ' held' : ''}`);
      rect.setAttribute('data-object', obj.id);
      rect.setAttribute('x', String(cu - su / 2));
      rect.setAttribute('y', String(mapV(cv) - sv / 2));
      rect.setAttribute('width', String(su));
      rect.setAttribute('height', String(sv));
      svg.append(rect);
    }

    const state = traj.states[this.session.cursor];
    const pts = armPolyline(state, traj.links)
      .map((p) => {
        const [u, v] = project(view, p);
        return `${u},${mapV(v)}`;
      })
      .join(' ');
    const line = this.doc.createElementNS(SVG_NS, 'polyline');
    line.setAttribute('class', 'arm');
    line.setAttribute('points', pts);
    svg.append(line);
  }
}
