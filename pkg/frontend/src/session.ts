// Session state lives in page memory only. No localStorage, no cookies:
// reloading the page always lands on the login view.

import type { Role } from "./catalog.js";

export interface ConsoleSession {
  token: string;
  username: string;
  role: Role;
  expiresAt: number; // epoch seconds, as reported by the gateway
}

export function secondsLeft(session: ConsoleSession, now: number = Date.now()): number {
  return Math.max(0, Math.floor(session.expiresAt - now / 1000));
}

export function formatCountdown(seconds: number): string {
  const m = Math.floor(seconds / 60);
  const s = seconds % 60;
  return m > 0 ? `${m}m ${s.toString().padStart(2, "0")}s` : `${s}s`;
}
