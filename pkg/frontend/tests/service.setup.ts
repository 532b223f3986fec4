// Spawns the real armcheck service (scripted mock adapter, fast interpreter
// profile) for the duration of the test run.

import { execFileSync, spawn, type ChildProcess } from 'node:child_process';

const PORT = 8912;
export const BASE_URL = `http://127.0.0.1:${PORT}`;

let service: ChildProcess | null = null;

function fixturePath(name: string): string {
  return execFileSync(
    'python3',
    ['-c', `from armcheck.fixtures import fixture_path; print(fixture_path(${JSON.stringify(name)}))`],
    { encoding: 'utf-8' },
  ).trim();
}

async function waitForService(): Promise<void> {
  const deadline = Date.now() + 30_000;
  while (Date.now() < deadline) {
    try {
      const resp = await fetch(`${BASE_URL}/critics`);
      if (resp.ok) return;
    } catch {
      // not up yet
    }
    await new Promise((r) => setTimeout(r, 200));
  }
  throw new Error('armcheck service did not come up');
}

export async function setup(): Promise<void> {
  const script = fixturePath('scripts/chat_demo.json');
  const config = fixturePath('interp_fast.json');
  service = spawn(
    'python3',
    [
      '-m',
      'armcheck.cli',
      'serve',
      '--bind',
      `127.0.0.1:${PORT}`,
      '--mock-script',
      script,
      '--config',
      config,
    ],
    { stdio: 'inherit' },
  );
  await waitForService();
}

export async function teardown(): Promise<void> {
  if (service) {
    service.kill('SIGTERM');
    service = null;
  }
}
