/** DOM wiring for the explorer single-page app. */

import { ApiClient } from "./api.js";
import { parsePreview } from "./obj.js";
import { SessionStore } from "./store.js";
import { DEFAULT_CAMERA, renderPreview } from "./viewer.js";

const api = new ApiClient("");
const store = new SessionStore(api);

const $ = <T extends HTMLElement>(id: string): T => {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el as T;
};

function renderBanner(): void {
  const banner = $("banner");
  banner.textContent = store.banner ?? "";
  banner.style.display = store.banner ? "block" : "none";
}

function renderSliders(): void {
  const host = $("sliders");
  host.replaceChildren();
  for (const s of store.sliders) {
    const row = document.createElement("div");
    row.className = "slider-row";
    const toggle = document.createElement("input");
    toggle.type = "checkbox";
    toggle.checked = s.enabled;
    toggle.addEventListener("change", () => {
      store.setSlider(s.name, { enabled: toggle.checked });
    });
    const label = document.createElement("label");
    label.textContent = s.name;
    const slider = document.createElement("input");
    slider.type = "range";
    slider.min = String(s.min);
    slider.max = String(s.max);
    slider.step = s.name === "fan" ? "0.5" : "1";
    slider.value = String(s.value);
    const box = document.createElement("input");
    box.type = "number";
    box.value = String(s.value);
    const sync = (v: number) => {
      store.setSlider(s.name, { value: v, enabled: true });
      toggle.checked = true;
      slider.value = String(v);
      box.value = String(v);
    };
    slider.addEventListener("input", () => sync(Number(slider.value)));
    box.addEventListener("change", () => sync(Number(box.value)));
    row.append(toggle, label, slider, box);
    host.appendChild(row);
  }
}

function drawTrace(canvas: HTMLCanvasElement, jobId: string): void {
  const trace = store.phiTrace(jobId);
  const ctx = canvas.getContext("2d");
  if (!ctx || trace.length === 0) return;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  const maxPhi = Math.max(...trace.map((t) => t.phi), store.epsilon);
  const maxIt = Math.max(...trace.map((t) => t.iteration), 1);
  ctx.strokeStyle = "#38f";
  ctx.beginPath();
  trace.forEach((t, i) => {
    const x = (t.iteration / maxIt) * (canvas.width - 4) + 2;
    const y = canvas.height - 2 - (t.phi / maxPhi) * (canvas.height - 4);
    if (i === 0) ctx.moveTo(x, y);
    else ctx.lineTo(x, y);
  });
  ctx.stroke();
  // epsilon line: convergence threshold from the service config
  const ey = canvas.height - 2 - (store.epsilon / maxPhi) * (canvas.height - 4);
  ctx.strokeStyle = "#4a4";
  ctx.setLineDash([3, 3]);
  ctx.beginPath();
  ctx.moveTo(0, ey);
  ctx.lineTo(canvas.width, ey);
  ctx.stroke();
  ctx.setLineDash([]);
}

function gammaCaption(gamma: Record<string, number> | undefined): string {
  if (!gamma) return "";
  return Object.entries(gamma)
    .map(([k, v]) => `${k}=${v}`)
    .join("  ");
}

function renderJobs(): void {
  const host = $("jobs");
  host.replaceChildren();
  for (const jobId of [...store.jobOrder].reverse()) {
    const record = store.jobs.get(jobId);
    if (!record) continue;
    const card = document.createElement("div");
    card.className = `job job-${record.status}`;
    const head = document.createElement("div");
    head.textContent =
      `${jobId}  ${record.status}` +
      (record.phi !== undefined ? `  phi=${record.phi.toFixed(4)}` : "") +
      (record.gamma ? `  ${gammaCaption(record.gamma)}` : "");
    card.appendChild(head);
    const chart = document.createElement("canvas");
    chart.width = 260;
    chart.height = 60;
    card.appendChild(chart);
    drawTrace(chart, jobId);
    if (record.status === "converged" || record.status === "budget-exhausted") {
      const view = document.createElement("canvas");
      view.width = 260;
      view.height = 200;
      card.appendChild(view);
      void api.getJobPreview(jobId).then((text) => {
        const ctx = view.getContext("2d");
        if (ctx) renderPreview(ctx, view.width, view.height, parsePreview(text), DEFAULT_CAMERA);
      });
    }
    host.appendChild(card);
  }
}

function download(filename: string, text: string): void {
  const a = document.createElement("a");
  a.href = URL.createObjectURL(new Blob([text], { type: "application/json" }));
  a.download = filename;
  a.click();
  URL.revokeObjectURL(a.href);
}

function renderGallery(): void {
  const host = $("gallery");
  host.replaceChildren();
  if (store.gallery.length === 0) {
    const empty = document.createElement("p");
    empty.textContent =
      "No candidates yet — upload a model and press Browse candidates.";
    host.appendChild(empty);
    return;
  }
  for (const entry of store.gallery) {
    const card = document.createElement("div");
    card.className = entry.pinned ? "card pinned" : "card";
    const view = document.createElement("canvas");
    view.width = 220;
    view.height = 180;
    card.appendChild(view);
    void api.getText(entry.candidate.preview).then((text) => {
      const ctx = view.getContext("2d");
      if (ctx) renderPreview(ctx, view.width, view.height, parsePreview(text), DEFAULT_CAMERA);
    });
    const caption = document.createElement("div");
    caption.textContent =
      gammaCaption(entry.candidate.gamma) +
      `  phi=${entry.candidate.phi.toFixed(3)}`;
    card.appendChild(caption);
    const pick = document.createElement("button");
    pick.textContent = "Select";
    pick.addEventListener("click", () => {
      void store.selectCandidate(entry.candidate.index).then((g) => {
        download(g.filename, g.text);
        renderGallery();
      });
    });
    card.appendChild(pick);
    host.appendChild(card);
  }
}

async function boot(): Promise<void> {
  await store.init().catch(() => renderBanner());
  $("upload").addEventListener("change", async (ev) => {
    const input = ev.target as HTMLInputElement;
    const file = input.files?.[0];
    if (!file) return;
    try {
      const info = await store.uploadModel(file.name, file);
      $("model-info").textContent =
        `${info.modelId} — ${info.kind}, ${info.elements} elements, ` +
        `default ${gammaCaption(info.gamma0)}`;
      renderSliders();
      renderGallery();
    } finally {
      renderBanner();
    }
  });
  $("run").addEventListener("click", async () => {
    try {
      await store.runOptimization();
      renderJobs();
    } finally {
      renderBanner();
    }
  });
  $("browse").addEventListener("click", async () => {
    const samples = Number(($("samples") as HTMLInputElement).value) || 4;
    try {
      await store.browseCandidates(samples);
      renderGallery();
    } finally {
      renderBanner();
    }
  });
  // jobs are minutes-long: 1 s status polling is plenty
  setInterval(() => {
    void store.poll().then(renderJobs, renderBanner);
  }, 1000);
  renderGallery();
}

void boot();
