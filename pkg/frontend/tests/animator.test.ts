import { describe, expect, it } from "vitest";

import { Animator } from "../src/animator.js";
import { FakeScheduler } from "./fixtures.js";

function makeAnimator(frames = 40, fps = 20) {
  const scheduler = new FakeScheduler();
  const drawn: number[] = [];
  let finishedAt: number | null = null;
  const animator = new Animator(
    frames,
    fps,
    (frame) => drawn.push(frame),
    () => {
      finishedAt = scheduler.now;
    },
    scheduler,
  );
  return { animator, scheduler, drawn, finished: () => finishedAt };
}

describe("Animator", () => {
  it("plays 40 frames at 20 fps in 2.0s within one frame", () => {
    const { animator, scheduler, finished } = makeAnimator(40, 20);
    animator.play();
    const frameMs = 1000 / 60; // simulated display refresh
    let guard = 0;
    while (finished() === null && guard++ < 500) {
      scheduler.tick(frameMs);
    }
    expect(finished()).not.toBeNull();
    // one extra display tick of slack on top of the nominal duration
    expect(finished()!).toBeGreaterThanOrEqual(2000 - 50);
    expect(finished()!).toBeLessThanOrEqual(2000 + 50);
    expect(animator.playing).toBe(false);
    expect(animator.frame).toBe(39);
  });

  it("advances frames monotonically and hits every frame at display rate", () => {
    const { animator, scheduler, drawn, finished } = makeAnimator(40, 20);
    animator.play();
    while (finished() === null) {
      scheduler.tick(1000 / 60);
    }
    for (let i = 1; i < drawn.length; i++) {
      expect(drawn[i]).toBeGreaterThan(drawn[i - 1]);
    }
    expect(drawn[drawn.length - 1]).toBe(39);
  });

  it("pause freezes the frame and cancels scheduling", () => {
    const { animator, scheduler } = makeAnimator();
    animator.play();
    scheduler.tick(0);
    scheduler.tick(500);
    const frameAtPause = animator.frame;
    animator.pause();
    expect(scheduler.pendingCount).toBe(0);
    scheduler.tick(1000);
    expect(animator.frame).toBe(frameAtPause);
    expect(animator.playing).toBe(false);
  });

  it("scrub to frame 0 shows the first-frame pose", () => {
    const { animator, scheduler, drawn } = makeAnimator();
    animator.play();
    scheduler.tick(0);
    scheduler.tick(700);
    animator.scrubTo(0);
    expect(animator.frame).toBe(0);
    expect(drawn[drawn.length - 1]).toBe(0);
    expect(animator.playing).toBe(false);
  });

  it("scrub clamps to the valid frame range", () => {
    const { animator } = makeAnimator(10, 20);
    animator.scrubTo(500);
    expect(animator.frame).toBe(9);
    animator.scrubTo(-3);
    expect(animator.frame).toBe(0);
  });

  it("replays from the start when played at the end", () => {
    const { animator, scheduler, finished } = makeAnimator(10, 20);
    animator.play();
    while (finished() === null) {
      scheduler.tick(1000 / 60);
    }
    expect(animator.frame).toBe(9);
    animator.play();
    expect(animator.frame).toBe(0);
    expect(animator.playing).toBe(true);
  });

  it("rejects degenerate configurations", () => {
    expect(() => new Animator(0, 20, () => {})).toThrow();
    expect(() => new Animator(10, 0, () => {})).toThrow();
  });
});
