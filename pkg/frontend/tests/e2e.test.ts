/** End-to-end steering loop against the real HTTP service.
 *
 * Upload the window-grid model, set target sliders, run to convergence,
 * browse candidates on the dual-granularity model, select one, and check
 * that the downloaded grammar evaluates (via the backend CLI — the UI
 * never computes grammar values) to the numbers on the card.
 */

import { execFileSync, spawn, ChildProcess } from "node:child_process";
import { mkdtempSync, readFileSync, rmSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import { parsePreview } from "../src/obj.js";
import { SessionStore } from "../src/store.js";

const PORT = 8741;
const BASE = `http://127.0.0.1:${PORT}`;

let work: string;
let server: ChildProcess;
let api: ApiClient;
let store: SessionStore;

function writeFixtures(dir: string): void {
  execFileSync("python3", [
    "-c",
    [
      "import sys",
      "from procgram.fixtures import generate_grid_model, mixed_grid_model, window_cell",
      "from procgram.io import save_obj",
      "d = sys.argv[1]",
      "save_obj(generate_grid_model(3, 2, window_cell(), seed=0), d + '/grid.obj')",
      "save_obj(mixed_grid_model(), d + '/mixed.obj')",
    ].join("\n"),
    dir,
  ]);
}

async function waitForService(): Promise<void> {
  for (let i = 0; i < 100; i++) {
    try {
      const res = await fetch(`${BASE}/api/config`);
      if (res.ok) return;
    } catch {
      // not up yet
    }
    await new Promise((r) => setTimeout(r, 200));
  }
  throw new Error("service did not come up");
}

function uploadBlob(path: string): Blob {
  return new Blob([readFileSync(path)], { type: "text/plain" });
}

beforeAll(async () => {
  work = mkdtempSync(join(tmpdir(), "explorer-e2e-"));
  writeFixtures(work);
  server = spawn(
    "procgram",
    ["serve", "--port", String(PORT), "--data-dir", join(work, "data"), "--workers", "2"],
    { stdio: "ignore" },
  );
  await waitForService();
  api = new ApiClient(BASE);
  store = new SessionStore(api);
  await store.init();
}, 60000);

afterAll(() => {
  server?.kill();
  rmSync(work, { recursive: true, force: true });
});

describe("explorer steering loop (e2e)", () => {
  let gridJobId: string;

  it("uploads the grid model and reports service-side defaults", async () => {
    const info = await store.uploadModel("grid.obj", uploadBlob(join(work, "grid.obj")));
    expect(info.kind).toBe("mesh");
    expect(info.gamma0.alp).toBe(1);
    expect(info.gamma0.non).toBe(2);
    const alp = store.sliders.find((s) => s.name === "alp")!;
    expect(alp.max).toBe(info.gamma0.alp);
  }, 120000);

  it("runs slider targets to convergence", async () => {
    store.setSlider("alp", { enabled: true, value: 1 });
    store.setSlider("non", { enabled: true, value: 2 });
    const record = await store.runOptimization();
    gridJobId = record.id;
    const done = await store.pollUntilDone(record.id, 250, 180000);
    expect(done.status).toBe("converged");
    expect(done.phi!).toBeLessThan(store.epsilon);
    const trace = store.phiTrace(record.id);
    expect(trace.length).toBeGreaterThan(0);
    expect(trace[trace.length - 1].phi).toBeLessThan(store.epsilon);
  }, 200000);

  it("shows a per-label colored preview of the converged grammar", async () => {
    const preview = parsePreview(await api.getJobPreview(gridJobId));
    expect(preview.kind).toBe("mesh");
    expect(preview.groups.length).toBeGreaterThanOrEqual(1);
    const colors = new Set(preview.groups.map((g) => g.color.join(",")));
    expect(colors.size).toBe(preview.groups.length);
  }, 120000);

  it("warm-starts a refinement from the converged job", async () => {
    store.setSlider("fan", { enabled: true, value: 5 });
    const refined = await store.runOptimization();
    expect(refined.warmFrom).toBe(gridJobId);
    const done = await store.pollUntilDone(refined.id, 250, 180000);
    expect(done.status).toBe("converged");
  }, 200000);

  it("reuses the cached job when targets are unchanged", async () => {
    const again = await store.runOptimization();
    expect(store.jobOrder.filter((id) => id === again.id)).toHaveLength(1);
  }, 120000);

  it("fills the gallery with distinct candidates on the dual-granularity model", async () => {
    await store.uploadModel("mixed.obj", uploadBlob(join(work, "mixed.obj")));
    const gallery = await store.browseCandidates(8);
    expect(gallery.length).toBeGreaterThanOrEqual(2);
    const distinct = new Set(
      gallery.map((e) => JSON.stringify(e.candidate.gamma)),
    );
    expect(distinct.size).toBeGreaterThanOrEqual(2);
    for (const entry of gallery) {
      const preview = parsePreview(await api.getText(entry.candidate.preview));
      expect(preview.kind).toBe("mesh");
      expect(preview.groups.length).toBeGreaterThanOrEqual(1);
    }
  }, 300000);

  it("downloads a grammar whose evaluated values match the card", async () => {
    const entry = store.gallery[store.gallery.length - 1];
    const dl = await store.selectCandidate(entry.candidate.index);
    expect(store.pinnedCandidate()).toBe(store.gallery.find((e) => e.pinned));
    const path = join(work, dl.filename);
    writeFileSync(path, dl.text);
    const evaluated = JSON.parse(
      execFileSync("procgram", ["evaluate", path], { encoding: "utf-8" }),
    );
    expect(evaluated).toEqual(entry.candidate.gamma);
  }, 120000);
});
