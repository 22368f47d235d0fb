/** Parser for the service's preview exports.
 *
 * Meshes arrive as OBJ text with one `usemtl label_<k>` block per grammar
 * label; point clouds arrive as XYZ rows.  The viewer flat-shades each
 * label with a deterministic color — no MTL fetch, no textures.
 */

export interface LabelGroup {
  label: string;
  color: [number, number, number];
  /** Flat triangle soup: 9 floats per face. */
  triangles: Float32Array;
}

export interface ParsedPreview {
  kind: "mesh" | "points";
  groups: LabelGroup[];
  /** Point clouds only: 3 floats per point. */
  points: Float32Array;
}

/** Deterministic flat color per label name (golden-ratio hue walk). */
export function labelColor(label: string): [number, number, number] {
  let hash = 0;
  for (let i = 0; i < label.length; i++) {
    hash = (hash * 31 + label.charCodeAt(i)) >>> 0;
  }
  const hue = ((hash * 0.61803398875) % 1) * 6;
  const sector = Math.floor(hue) % 6;
  const f = hue - Math.floor(hue);
  const table: [number, number, number][] = [
    [1, f, 0.15],
    [1 - f, 1, 0.15],
    [0.15, 1, f],
    [0.15, 1 - f, 1],
    [f, 0.15, 1],
    [1, 0.15, 1 - f],
  ];
  return table[sector];
}

export function parsePreview(text: string): ParsedPreview {
  const lines = text.split("\n");
  const vertices: number[] = [];
  const byLabel = new Map<string, number[]>();
  let current = "label_0";
  let sawObjKeyword = false;
  for (const raw of lines) {
    const line = raw.trim();
    if (line === "" || line.startsWith("#")) continue;
    const parts = line.split(/\s+/);
    switch (parts[0]) {
      case "v":
        sawObjKeyword = true;
        vertices.push(Number(parts[1]), Number(parts[2]), Number(parts[3]));
        break;
      case "usemtl":
        sawObjKeyword = true;
        current = parts[1] ?? current;
        break;
      case "f": {
        sawObjKeyword = true;
        const tri = byLabel.get(current) ?? [];
        for (let k = 1; k <= 3; k++) {
          // OBJ indices are 1-based; preview faces are pure triangles
          const idx = (parseInt(parts[k], 10) - 1) * 3;
          tri.push(vertices[idx], vertices[idx + 1], vertices[idx + 2]);
        }
        byLabel.set(current, tri);
        break;
      }
      case "mtllib":
      case "o":
      case "g":
      case "s":
        sawObjKeyword = true;
        break;
      default:
        // bare numeric row: XYZ point
        if (!sawObjKeyword && parts.length >= 3 && !Number.isNaN(Number(parts[0]))) {
          vertices.push(Number(parts[0]), Number(parts[1]), Number(parts[2]));
        }
        break;
    }
  }
  if (!sawObjKeyword) {
    return { kind: "points", groups: [], points: new Float32Array(vertices) };
  }
  const groups: LabelGroup[] = [...byLabel.entries()].map(([label, tris]) => ({
    label,
    color: labelColor(label),
    triangles: new Float32Array(tris),
  }));
  groups.sort((a, b) => a.label.localeCompare(b.label));
  return { kind: "mesh", groups, points: new Float32Array(0) };
}

/** Axis-aligned bounds over every vertex in the preview. */
export function previewBounds(p: ParsedPreview): { min: number[]; max: number[] } {
  const min = [Infinity, Infinity, Infinity];
  const max = [-Infinity, -Infinity, -Infinity];
  const scan = (arr: Float32Array) => {
    for (let i = 0; i < arr.length; i += 3) {
      for (let a = 0; a < 3; a++) {
        min[a] = Math.min(min[a], arr[i + a]);
        max[a] = Math.max(max[a], arr[i + a]);
      }
    }
  };
  for (const g of p.groups) scan(g.triangles);
  scan(p.points);
  return { min, max };
}
