// Frame clock for motion playback. The scheduler is injectable so tests can
// drive time manually; the default uses requestAnimationFrame.

export interface FrameScheduler {
  schedule(callback: (timestampMs: number) => void): number;
  cancel(handle: number): void;
}

export const rafScheduler: FrameScheduler = {
  schedule: (cb) => requestAnimationFrame(cb),
  cancel: (handle) => cancelAnimationFrame(handle),
};

/**
 * Plays frameCount frames at fps. Each frame is shown for 1/fps seconds, so a
 * full run takes frameCount/fps seconds from play() to the finish callback.
 */
export class Animator {
  private handle: number | null = null;
  private startTimestamp: number | null = null;
  private baseFrame = 0;
  private currentFrame = 0;
  private _playing = false;

  constructor(
    readonly frameCount: number,
    readonly fps: number,
    private readonly onFrame: (frame: number) => void,
    private readonly onFinish: () => void = () => {},
    private readonly scheduler: FrameScheduler = rafScheduler,
  ) {
    if (frameCount < 1 || fps <= 0) {
      throw new Error(`invalid animation: ${frameCount} frames at ${fps} fps`);
    }
  }

  get frame(): number {
    return this.currentFrame;
  }

  get playing(): boolean {
    return this._playing;
  }

  get durationMs(): number {
    return (1000 * this.frameCount) / this.fps;
  }

  play(): void {
    if (this._playing) return;
    if (this.currentFrame >= this.frameCount - 1) {
      this.scrubTo(0); // replay from the start when already at the end
    }
    this.baseFrame = this.currentFrame;
    this.startTimestamp = null;
    this._playing = true;
    this.handle = this.scheduler.schedule(this.tick);
  }

  pause(): void {
    this._playing = false;
    if (this.handle !== null) {
      this.scheduler.cancel(this.handle);
      this.handle = null;
    }
  }

  scrubTo(frame: number): void {
    this.pause();
    this.currentFrame = Math.min(Math.max(Math.floor(frame), 0), this.frameCount - 1);
    this.onFrame(this.currentFrame);
  }

  private tick = (timestampMs: number): void => {
    if (!this._playing) return;
    if (this.startTimestamp === null) {
      this.startTimestamp = timestampMs;
    }
    const elapsed = timestampMs - this.startTimestamp;
    const advance = Math.floor((elapsed * this.fps) / 1000);
    const frame = Math.min(this.baseFrame + advance, this.frameCount - 1);
    if (frame !== this.currentFrame) {
      this.currentFrame = frame;
      this.onFrame(frame);
    }
    const remaining = this.frameCount - this.baseFrame;
    if (elapsed >= (1000 * remaining) / this.fps) {
      this._playing = false;
      this.handle = null;
      this.onFinish();
      return;
    }
    this.handle = this.scheduler.schedule(this.tick);
  };
}
