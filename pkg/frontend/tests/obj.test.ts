import { describe, expect, it } from "vitest";

import { labelColor, parsePreview, previewBounds } from "../src/obj.js";

const OBJ = `mtllib preview.mtl
v 0 0 0
v 1 0 0
v 0 1 0
v 2 0 0
v 3 0 0
v 2 1 0
usemtl label_0
f 1 2 3
usemtl label_1
f 4 5 6
`;

describe("parsePreview", () => {
  it("groups faces by usemtl label", () => {
    const p = parsePreview(OBJ);
    expect(p.kind).toBe("mesh");
    expect(p.groups.map((g) => g.label)).toEqual(["label_0", "label_1"]);
    expect(p.groups[0].triangles).toHaveLength(9);
    expect(Array.from(p.groups[1].triangles.slice(0, 3))).toEqual([2, 0, 0]);
  });

  it("assigns distinct deterministic colors per label", () => {
    const a = labelColor("label_0");
    expect(labelColor("label_0")).toEqual(a);
    expect(labelColor("label_1")).not.toEqual(a);
    for (const c of a) {
      expect(c).toBeGreaterThanOrEqual(0);
      expect(c).toBeLessThanOrEqual(1);
    }
  });

  it("collects unlabeled faces under a default group", () => {
    const p = parsePreview("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n");
    expect(p.groups).toHaveLength(1);
    expect(p.groups[0].triangles).toHaveLength(9);
  });

  it("reads bare numeric rows as a point cloud", () => {
    const p = parsePreview("0 0 0\n1.5 2 3\n-1 0 2\n");
    expect(p.kind).toBe("points");
    expect(p.points).toHaveLength(9);
    expect(p.points[3]).toBeCloseTo(1.5);
  });

  it("computes bounds over all geometry", () => {
    const { min, max } = previewBounds(parsePreview(OBJ));
    expect(min).toEqual([0, 0, 0]);
    expect(max).toEqual([3, 1, 0]);
  });

  it("ignores comments and blank lines", () => {
    const p = parsePreview("# header\n\nv 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n");
    expect(p.groups[0].triangles).toHaveLength(9);
  });
});
