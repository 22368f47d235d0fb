/** Minimal software 3D viewer: orthographic projection onto a 2D canvas,
 * painter-sorted flat-shaded triangles.  No WebGL, no textures — previews
 * are small instance derivations, so a few thousand faces suffice.
 */

import { ParsedPreview, previewBounds } from "./obj.js";

export interface Camera {
  /** Rotation about the world y axis (radians). */
  yaw: number;
  /** Rotation about the camera x axis (radians). */
  pitch: number;
  zoom: number;
}

export const DEFAULT_CAMERA: Camera = { yaw: -0.6, pitch: -0.35, zoom: 1 };

/** Row-major 3x3 rotation for yaw-then-pitch viewing. */
export function viewMatrix(cam: Camera): number[] {
  const cy = Math.cos(cam.yaw);
  const sy = Math.sin(cam.yaw);
  const cp = Math.cos(cam.pitch);
  const sp = Math.sin(cam.pitch);
  // R = Rx(pitch) * Ry(yaw)
  return [cy, 0, sy, sy * sp, cp, -cy * sp, -sy * cp, sp, cy * cp];
}

export function applyMatrix(m: number[], v: [number, number, number]): [number, number, number] {
  return [
    m[0] * v[0] + m[1] * v[1] + m[2] * v[2],
    m[3] * v[0] + m[4] * v[1] + m[5] * v[2],
    m[6] * v[0] + m[7] * v[1] + m[8] * v[2],
  ];
}

interface Face {
  pts: [number, number][];
  depth: number;
  fill: string;
}

function shade(color: [number, number, number], normalZ: number): string {
  const lum = 0.45 + 0.55 * Math.abs(normalZ);
  const ch = (c: number) => Math.round(255 * Math.min(1, c * lum));
  return `rgb(${ch(color[0])},${ch(color[1])},${ch(color[2])})`;
}

/** Draw the preview into `ctx`; works with any CanvasRenderingContext2D. */
export function renderPreview(
  ctx: CanvasRenderingContext2D,
  width: number,
  height: number,
  preview: ParsedPreview,
  cam: Camera = DEFAULT_CAMERA,
): void {
  ctx.clearRect(0, 0, width, height);
  const { min, max } = previewBounds(preview);
  if (!Number.isFinite(min[0])) return;
  const center = min.map((lo, a) => 0.5 * (lo + max[a]));
  const span = Math.max(...max.map((hi, a) => hi - min[a]), 1e-9);
  const scale = (cam.zoom * 0.8 * Math.min(width, height)) / span;
  const m = viewMatrix(cam);
  const project = (x: number, y: number, z: number): [number, number, number] => {
    const p = applyMatrix(m, [x - center[0], y - center[1], z - center[2]]);
    return [width / 2 + p[0] * scale, height / 2 - p[1] * scale, p[2]];
  };

  if (preview.kind === "points") {
    ctx.fillStyle = "#9ad";
    for (let i = 0; i < preview.points.length; i += 3) {
      const [sx, sy] = project(
        preview.points[i],
        preview.points[i + 1],
        preview.points[i + 2],
      );
      ctx.fillRect(sx - 1, sy - 1, 2, 2);
    }
    return;
  }

  const faces: Face[] = [];
  for (const g of preview.groups) {
    const t = g.triangles;
    for (let i = 0; i < t.length; i += 9) {
      const a = project(t[i], t[i + 1], t[i + 2]);
      const b = project(t[i + 3], t[i + 4], t[i + 5]);
      const c = project(t[i + 6], t[i + 7], t[i + 8]);
      const ux = b[0] - a[0];
      const uy = b[1] - a[1];
      const vx = c[0] - a[0];
      const vy = c[1] - a[1];
      const area2 = ux * vy - uy * vx;
      const edge = Math.hypot(ux, uy) * Math.hypot(vx, vy);
      const nz = edge > 0 ? area2 / edge : 0;
      faces.push({
        pts: [
          [a[0], a[1]],
          [b[0], b[1]],
          [c[0], c[1]],
        ],
        depth: (a[2] + b[2] + c[2]) / 3,
        fill: shade(g.color, nz),
      });
    }
  }
  faces.sort((p, q) => p.depth - q.depth);
  for (const f of faces) {
    ctx.beginPath();
    ctx.moveTo(f.pts[0][0], f.pts[0][1]);
    ctx.lineTo(f.pts[1][0], f.pts[1][1]);
    ctx.lineTo(f.pts[2][0], f.pts[2][1]);
    ctx.closePath();
    ctx.fillStyle = f.fill;
    ctx.fill();
  }
}
