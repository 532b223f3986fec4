// Typed client for the armcheck HTTP service. The UI talks to the backend
// exclusively through these endpoints.

export type Flag = 'OK' | 'Warning' | 'Error';

export interface Measurement {
  value: number;
  unit: string;
  t_ms: number | null;
}

export interface CriticReport {
  critic: string;
  flag: Flag;
  explanation: string;
  fix_hint: string;
  measurement: Measurement | null;
  thresholds: Record<string, number>;
}

export interface ScoreDoc {
  points: Record<string, number>;
  total: number;
}

export interface RunResult {
  trajectory_id: string;
  reports: CriticReport[];
  score: ScoreDoc | null;
}

export interface ChatResult {
  program: string;
  explanation: string;
}

export interface PoseDoc {
  p: [number, number, number];
  o: [number, number, number, number];
}

export interface StateDoc {
  t_ms: number;
  q: number[];
  frames: Record<string, PoseDoc>;
  proximity: Record<string, number>;
  gripper_open: boolean;
}

export interface AttachmentEventDoc {
  t_ms: number;
  kind: 'attach' | 'detach';
  object_id: string;
  pose: PoseDoc;
}

export interface SceneObjectDoc {
  id: string;
  position: [number, number, number];
  scale: [number, number, number];
  kind: string;
}

export interface TrajectoryPayload {
  states: StateDoc[];
  attachment: AttachmentEventDoc[];
  reports: CriticReport[];
  score: ScoreDoc | null;
  links: string[];
  scene: {
    objects: SceneObjectDoc[];
    workspace: { min: [number, number, number]; max: [number, number, number] };
  };
}

export class ApiError extends Error {
  constructor(
    public status: number,
    public body: { error?: string; line?: number | null } & Record<string, unknown>,
  ) {
    super(body.error ?? `HTTP ${status}`);
  }
}

export class ServiceClient {
  constructor(private baseUrl: string) {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const resp = await fetch(`${this.baseUrl}${path}`, {
      method,
      headers: { 'Content-Type': 'application/json' },
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    const payload = await resp.json().catch(() => ({}));
    if (!resp.ok) throw new ApiError(resp.status, payload);
    return payload as T;
  }

  async createSession(scene?: string): Promise<string> {
    const out = await this.request<{ session_id: string }>('POST', '/session', { scene });
    return out.session_id;
  }

  listCritics(): Promise<{ critics: string[]; config: Record<string, number> }> {
    return this.request('GET', '/critics');
  }

  chat(sessionId: string, message: string): Promise<ChatResult> {
    return this.request('POST', `/session/${sessionId}/chat`, { message });
  }

  run(sessionId: string, program: string, critics: string[]): Promise<RunResult> {
    return this.request('POST', `/session/${sessionId}/run`, { program, critics });
  }

  async fix(sessionId: string, critic: string): Promise<string> {
    const out = await this.request<{ revised_program: string }>(
      'POST',
      `/session/${sessionId}/fix`,
      { critic },
    );
    return out.revised_program;
  }

  trajectory(sessionId: string, tid: string): Promise<TrajectoryPayload> {
    return this.request('GET', `/session/${sessionId}/trajectory/${tid}`);
  }
}
