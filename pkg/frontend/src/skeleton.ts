// Stick-figure drawing: orthographic projection of 3D joints plus bone
// connectivity for the two skeleton layouts the service produces.

export type View = "front" | "side";

// 21-joint layout: root + spine/head chain, then left arm, right arm,
// left leg, right leg.
const BONES_21: Array<[number, number]> = [
  [0, 1], [1, 2], [2, 3], [3, 4],
  [2, 5], [5, 6], [6, 7],
  [2, 8], [8, 9], [9, 10],
  [0, 11], [11, 12], [12, 13], [13, 14], [14, 15],
  [0, 16], [16, 17], [17, 18], [18, 19], [19, 20],
];

// 22-joint SMPL-style layout.
const BONES_22: Array<[number, number]> = [
  [0, 3], [3, 6], [6, 9], [9, 12], [12, 15],
  [9, 13], [13, 16], [16, 18], [18, 20],
  [9, 14], [14, 17], [17, 19], [19, 21],
  [0, 1], [1, 4], [4, 7], [7, 10],
  [0, 2], [2, 5], [5, 8], [8, 11],
];

export function bonesFor(jointCount: number): Array<[number, number]> {
  if (jointCount === 21) return BONES_21;
  if (jointCount === 22) return BONES_22;
  return []; // unknown topology: draw joints only
}

/** Orthographic projection of one frame: front uses (x, y), side uses (z, y). */
export function projectFrame(frame: number[][], view: View): Array<[number, number]> {
  const h = view === "front" ? 0 : 2;
  return frame.map((joint) => [joint[h], joint[1]]);
}

export interface FitTransform {
  scale: number;
  tx: number;
  ty: number;
}

/** Fit every projected frame of the motion into a width x height box. */
export function fitTransform(
  joints: number[][][],
  view: View,
  width: number,
  height: number,
  margin = 20,
): FitTransform {
  let minX = Infinity;
  let maxX = -Infinity;
  let minY = Infinity;
  let maxY = -Infinity;
  for (const frame of joints) {
    for (const [x, y] of projectFrame(frame, view)) {
      minX = Math.min(minX, x);
      maxX = Math.max(maxX, x);
      minY = Math.min(minY, y);
      maxY = Math.max(maxY, y);
    }
  }
  const spanX = Math.max(maxX - minX, 1e-6);
  const spanY = Math.max(maxY - minY, 1e-6);
  const scale = Math.min((width - 2 * margin) / spanX, (height - 2 * margin) / spanY);
  // canvas y grows downward; flip so the figure stands upright
  const tx = margin + (width - 2 * margin - spanX * scale) / 2 - minX * scale;
  const ty = height - margin - (height - 2 * margin - spanY * scale) / 2 + minY * scale;
  return { scale, tx, ty };
}

export function toCanvas(point: [number, number], t: FitTransform): [number, number] {
  return [point[0] * t.scale + t.tx, -point[1] * t.scale + t.ty];
}

/** The subset of CanvasRenderingContext2D the renderer needs (stub-friendly). */
export interface Draw2D {
  clearRect(x: number, y: number, w: number, h: number): void;
  beginPath(): void;
  moveTo(x: number, y: number): void;
  lineTo(x: number, y: number): void;
  stroke(): void;
  arc(x: number, y: number, r: number, a0: number, a1: number): void;
  fill(): void;
  lineWidth: number;
  strokeStyle: string | CanvasGradient | CanvasPattern;
  fillStyle: string | CanvasGradient | CanvasPattern;
}

export function drawFrame(
  ctx: Draw2D,
  joints: number[][][],
  frameIndex: number,
  view: View,
  width: number,
  height: number,
  transform?: FitTransform,
): void {
  const t = transform ?? fitTransform(joints, view, width, height);
  const frame = joints[frameIndex];
  const projected = projectFrame(frame, view).map((p) => toCanvas(p, t));

  ctx.clearRect(0, 0, width, height);
  ctx.lineWidth = 2;
  ctx.strokeStyle = "#4f8fea";
  ctx.fillStyle = "#dce6f5";
  for (const [a, b] of bonesFor(frame.length)) {
    ctx.beginPath();
    ctx.moveTo(projected[a][0], projected[a][1]);
    ctx.lineTo(projected[b][0], projected[b][1]);
    ctx.stroke();
  }
  for (const [x, y] of projected) {
    ctx.beginPath();
    ctx.arc(x, y, 3, 0, 2 * Math.PI);
    ctx.fill();
  }
}
