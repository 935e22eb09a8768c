import { MotionData, ServiceClient, ServiceError, QueryResult } from "./api.js";
import { Animator, FrameScheduler, rafScheduler } from "./animator.js";
import { renderResults, setCardError } from "./results.js";
import { Draw2D, View, drawFrame, fitTransform } from "./skeleton.js";

export interface AppDeps {
  client: ServiceClient;
  scheduler?: FrameScheduler;
}

const CANVAS_W = 420;
const CANVAS_H = 340;

export class App {
  readonly client: ServiceClient;
  readonly scheduler: FrameScheduler;

  results: QueryResult[] = [];
  motion: MotionData | null = null;
  animator: Animator | null = null;
  view: View = "front";
  queryPending = false;
  motionFetches = 0;

  private readonly input: HTMLInputElement;
  private readonly kInput: HTMLInputElement;
  private readonly submitBtn: HTMLButtonElement;
  private readonly banner: HTMLElement;
  private readonly resultsList: HTMLElement;
  private readonly canvas: HTMLCanvasElement;
  private readonly playPauseBtn: HTMLButtonElement;
  private readonly scrubber: HTMLInputElement;
  private readonly viewBtn: HTMLButtonElement;
  private readonly playerLabel: HTMLElement;
  private readonly ctx: Draw2D | null;

  constructor(root: HTMLElement, deps: AppDeps) {
    this.client = deps.client;
    this.scheduler = deps.scheduler ?? rafScheduler;
    root.innerHTML = `
      <section class="search">
        <input class="query-input" type="text" placeholder="describe a motion, e.g. 'a person walks in a circle'" />
        <input class="k-input" type="number" min="1" value="5" title="results to retrieve" />
        <button class="submit-btn" type="button" disabled>search</button>
      </section>
      <div class="error-banner" hidden></div>
      <ul class="results"></ul>
      <section class="player" hidden>
        <div class="player-header">
          <span class="player-label"></span>
          <button class="view-btn" type="button">side view</button>
        </div>
        <canvas width="${CANVAS_W}" height="${CANVAS_H}"></canvas>
        <div class="player-controls">
          <button class="playpause-btn" type="button">pause</button>
          <input class="scrubber" type="range" min="0" value="0" step="1" />
        </div>
      </section>
    `;
    this.input = root.querySelector(".query-input")!;
    this.kInput = root.querySelector(".k-input")!;
    this.submitBtn = root.querySelector(".submit-btn")!;
    this.banner = root.querySelector(".error-banner")!;
    this.resultsList = root.querySelector(".results")!;
    this.canvas = root.querySelector("canvas")!;
    this.playPauseBtn = root.querySelector(".playpause-btn")!;
    this.scrubber = root.querySelector(".scrubber")!;
    this.viewBtn = root.querySelector(".view-btn")!;
    this.playerLabel = root.querySelector(".player-label")!;
    this.ctx = this.canvas.getContext ? (this.canvas.getContext("2d") as Draw2D | null) : null;

    this.input.addEventListener("input", () => this.syncSubmitEnabled());
    this.input.addEventListener("keydown", (event) => {
      if (event.key === "Enter" && !this.submitBtn.disabled) void this.submit();
    });
    this.submitBtn.addEventListener("click", () => void this.submit());
    this.playPauseBtn.addEventListener("click", () => this.togglePlayback());
    this.scrubber.addEventListener("input", () => {
      this.animator?.scrubTo(Number(this.scrubber.value));
      this.syncPlayButton();
    });
    this.viewBtn.addEventListener("click", () => this.toggleView());
  }

  private syncSubmitEnabled(): void {
    this.submitBtn.disabled = this.input.value.trim() === "" || this.queryPending;
  }

  private showError(message: string): void {
    this.banner.textContent = message;
    this.banner.hidden = false;
  }

  private clearError(): void {
    this.banner.textContent = "";
    this.banner.hidden = true;
  }

  setQuery(text: string): void {
    this.input.value = text;
    this.syncSubmitEnabled();
  }

  async submit(): Promise<void> {
    const text = this.input.value.trim();
    if (text === "" || this.queryPending) return;
    const k = Math.max(1, Number(this.kInput.value) || 5);
    this.queryPending = true;
    this.syncSubmitEnabled();
    try {
      const results = await this.client.query(text, k);
      this.results = results;
      this.clearError();
      renderResults(this.resultsList, results, (id) => void this.playMotion(id));
    } catch (err) {
      // keep whatever is currently rendered; only surface the banner
      this.showError(err instanceof ServiceError ? err.message : String(err));
    } finally {
      this.queryPending = false;
      this.syncSubmitEnabled();
    }
  }

  async playMotion(motionId: string): Promise<void> {
    let motion: MotionData;
    try {
      this.motionFetches += 1;
      motion = await this.client.motion(motionId);
    } catch (err) {
      const message = err instanceof ServiceError ? err.message : String(err);
      setCardError(this.resultsList, motionId, message);
      return;
    }
    this.animator?.pause();
    this.motion = motion;
    const player = this.playerSection();
    player.hidden = false;
    this.playerLabel.textContent = `${motion.motion_id} — ${motion.joints.length} frames @ ${motion.fps} fps`;
    this.scrubber.max = String(motion.joints.length - 1);
    this.scrubber.value = "0";
    this.animator = new Animator(
      motion.joints.length,
      motion.fps,
      (frame) => this.renderFrame(frame),
      () => this.syncPlayButton(),
      this.scheduler,
    );
    this.renderFrame(0);
    this.animator.play();
    this.syncPlayButton();
  }

  private playerSection(): HTMLElement {
    return this.playerLabel.closest("section")!;
  }

  private renderFrame(frame: number): void {
    this.scrubber.value = String(frame);
    if (this.motion && this.ctx) {
      drawFrame(this.ctx, this.motion.joints, frame, this.view, CANVAS_W, CANVAS_H);
    }
  }

  private togglePlayback(): void {
    if (!this.animator) return;
    if (this.animator.playing) {
      this.animator.pause();
    } else {
      this.animator.play();
    }
    this.syncPlayButton();
  }

  private syncPlayButton(): void {
    this.playPauseBtn.textContent = this.animator?.playing ? "pause" : "play";
  }

  private toggleView(): void {
    this.view = this.view === "front" ? "side" : "front";
    this.viewBtn.textContent = this.view === "front" ? "side view" : "front view";
    if (this.animator) this.renderFrame(this.animator.frame);
  }
}

export function initApp(root: HTMLElement, deps: AppDeps): App {
  return new App(root, deps);
}
