// Canned fixture service: a small "index" of motions with deterministic
// scores, served through the ServiceClient's injectable fetch.

import { MotionData, QueryResult } from "../src/api.js";
import { FrameScheduler } from "../src/animator.js";

export const CANNED_RESULTS: QueryResult[] = [
  { motion_id: "synth-0003", score: 0.98213, rank: 1 },
  { motion_id: "synth-0001", score: 0.74419, rank: 2 },
  { motion_id: "synth-0007", score: 0.51002, rank: 3 },
  { motion_id: "synth-0000", score: 0.10944, rank: 4 },
];

export function cannedMotion(frames = 40, fps = 20, joints = 21): MotionData {
  const data: number[][][] = [];
  for (let t = 0; t < frames; t++) {
    const frame: number[][] = [];
    for (let j = 0; j < joints; j++) {
      frame.push([Math.sin(t / 10 + j), 1 + j * 0.05, Math.cos(t / 10 + j)]);
    }
    data.push(frame);
  }
  return { motion_id: "synth-0003", fps, joints: data };
}

function jsonResponse(body: unknown, status = 200): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}

export interface FixtureService {
  fetchFn: (input: string, init?: RequestInit) => Promise<Response>;
  requests: string[];
  online: boolean;
  motions: Map<string, MotionData>;
}

export function fixtureService(results: QueryResult[] = CANNED_RESULTS): FixtureService {
  const motions = new Map<string, MotionData>();
  const motion = cannedMotion();
  motions.set(motion.motion_id, motion);

  const service: FixtureService = {
    requests: [],
    online: true,
    motions,
    fetchFn: async (input: string, init?: RequestInit) => {
      service.requests.push(`${init?.method ?? "GET"} ${input}`);
      if (!service.online) {
        throw new TypeError("fetch failed");
      }
      if (input.endsWith("/query")) {
        const body = JSON.parse(String(init?.body)) as { text: string; k: number };
        if (!body.text.trim()) {
          return jsonResponse({ detail: "text must be non-empty" }, 400);
        }
        return jsonResponse({ results: results.slice(0, body.k) });
      }
      const match = input.match(/\/motions\/(.+)$/);
      if (match) {
        const found = motions.get(decodeURIComponent(match[1]));
        if (!found) return jsonResponse({ detail: `unknown motion '${match[1]}'` }, 404);
        return jsonResponse(found);
      }
      if (input.endsWith("/health")) {
        return jsonResponse({ status: "ok", index_size: results.length });
      }
      return jsonResponse({ detail: "not found" }, 404);
    },
  };
  return service;
}

/** Manual clock: tests advance time explicitly via tick(). */
export class FakeScheduler implements FrameScheduler {
  private callbacks = new Map<number, (t: number) => void>();
  private nextHandle = 1;
  now = 0;

  schedule(callback: (t: number) => void): number {
    const handle = this.nextHandle++;
    this.callbacks.set(handle, callback);
    return handle;
  }

  cancel(handle: number): void {
    this.callbacks.delete(handle);
  }

  /** Advance the clock and fire all pending callbacks at the new timestamp. */
  tick(deltaMs: number): void {
    this.now += deltaMs;
    const pending = [...this.callbacks.entries()];
    this.callbacks.clear();
    for (const [, callback] of pending) {
      callback(this.now);
    }
  }

  get pendingCount(): number {
    return this.callbacks.size;
  }
}
