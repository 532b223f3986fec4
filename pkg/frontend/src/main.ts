import { ServiceClient } from './api.js';
import { App } from './ui.js';

declare global {
  interface Window {
    __ARMCHECK_BASE__?: string;
  }
}

const base = window.__ARMCHECK_BASE__ ?? 'http://127.0.0.1:8080';
const root = document.getElementById('app');
if (root) {
  const app = new App(root, new ServiceClient(base));
  void app.boot().catch((e) => {
    root.textContent = `failed to start: ${e}`;
  });
}
