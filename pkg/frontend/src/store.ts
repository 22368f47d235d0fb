/** Single state store for the explorer session.
 *
 * Holds the uploaded model, the target sliders, the live job list, and the
 * candidate gallery.  All grammar statistics displayed anywhere come from
 * service responses — the store never computes them.
 */

import {
  ApiClient,
  ApiError,
  Candidate,
  Gamma,
  JobRecord,
  ModelInfo,
  ServiceConfig,
} from "./api.js";

export interface SliderState {
  name: string;
  enabled: boolean;
  value: number;
  weight: number;
  min: number;
  max: number;
}

export interface GalleryEntry {
  suggestId: string;
  candidate: Candidate;
  pinned: boolean;
}

export interface GrammarDownload {
  filename: string;
  text: string;
}

const TERMINAL: ReadonlySet<string> = new Set([
  "converged",
  "budget-exhausted",
  "failed",
]);

function canonical(value: unknown): string {
  if (Array.isArray(value)) return `[${value.map(canonical).join(",")}]`;
  if (value && typeof value === "object") {
    const entries = Object.entries(value as Record<string, unknown>)
      .sort(([a], [b]) => (a < b ? -1 : 1))
      .map(([k, v]) => `${JSON.stringify(k)}:${canonical(v)}`);
    return `{${entries.join(",")}}`;
  }
  return JSON.stringify(value);
}

export class SessionStore {
  config: ServiceConfig | null = null;
  modelId: string | null = null;
  modelInfo: ModelInfo | null = null;
  sliders: SliderState[] = [];
  jobs = new Map<string, JobRecord>();
  jobOrder: string[] = [];
  gallery: GalleryEntry[] = [];
  suggestId: string | null = null;
  /** Last successfully finished job; refinements warm-start from it. */
  activeJobId: string | null = null;
  banner: string | null = null;

  private jobBySignature = new Map<string, string>();

  constructor(private readonly api: ApiClient) {}

  async init(): Promise<void> {
    this.config = await this.guard(() => this.api.getConfig());
  }

  get epsilon(): number {
    return this.config?.epsilon ?? 0.05;
  }

  /** Report service failures in the banner; connection errors are retriable. */
  private async guard<T>(fn: () => Promise<T>): Promise<T> {
    try {
      const out = await fn();
      this.banner = null;
      return out;
    } catch (err) {
      this.banner =
        err instanceof ApiError && err.status === 0
          ? `service unreachable: ${err.message} — retry`
          : String(err instanceof Error ? err.message : err);
      throw err;
    }
  }

  async uploadModel(name: string, bytes: Blob): Promise<ModelInfo> {
    if (!this.config) await this.init();
    const modelId = await this.guard(() => this.api.uploadModel(name, bytes));
    const info = await this.guard(() => this.api.getModelInfo(modelId));
    this.modelId = modelId;
    this.modelInfo = info;
    this.gallery = [];
    this.suggestId = null;
    this.activeJobId = null;
    this.jobBySignature.clear();
    this.buildSliders(info.gamma0);
    return info;
  }

  /** One slider per grammar value; bounds are [0, gamma0] per the service,
   * never local constants. */
  private buildSliders(gamma0: Gamma): void {
    const names = this.config?.values ?? Object.keys(gamma0);
    this.sliders = names.map((name) => ({
      name,
      enabled: false,
      value: gamma0[name] ?? 0,
      weight: 1,
      min: 0,
      max: gamma0[name] ?? 0,
    }));
  }

  setSlider(name: string, fields: Partial<Omit<SliderState, "name">>): void {
    const s = this.sliders.find((x) => x.name === name);
    if (!s) throw new Error(`unknown grammar value '${name}'`);
    Object.assign(s, fields);
    s.value = Math.min(Math.max(s.value, s.min), s.max);
    s.weight = Math.max(s.weight, 0);
  }

  targets(): { target: Gamma; weights: Gamma } {
    const target: Gamma = {};
    const weights: Gamma = {};
    for (const s of this.sliders) {
      if (!s.enabled) continue;
      target[s.name] = s.value;
      if (s.weight !== 1) weights[s.name] = s.weight;
    }
    return { target, weights };
  }

  /** Launch (or reuse) an optimization for the current slider targets.
   *
   * Identical requests return the existing job without a new POST; when a
   * finished job is active, the new job warm-starts from it via refine.
   */
  async runOptimization(seed = 0): Promise<JobRecord> {
    if (!this.modelId) throw new Error("upload a model first");
    const { target, weights } = this.targets();
    if (Object.keys(target).length === 0) {
      throw new Error("enable at least one target slider");
    }
    const warmFrom = this.warmSource();
    const signature = canonical({
      modelId: this.modelId,
      target,
      weights,
      warmFrom,
      seed,
    });
    const cached = this.jobBySignature.get(signature);
    if (cached) {
      const record = this.jobs.get(cached);
      if (record && record.status !== "failed") return record;
    }
    const request = { modelId: this.modelId, target, weights, seed };
    const jobId = await this.guard(() =>
      warmFrom
        ? this.api.refineJob(warmFrom, request)
        : this.api.createJob(request),
    );
    this.jobBySignature.set(signature, jobId);
    const record = await this.guard(() => this.api.getJob(jobId));
    this.jobs.set(jobId, record);
    this.jobOrder.push(jobId);
    return record;
  }

  private warmSource(): string | null {
    if (!this.activeJobId) return null;
    const record = this.jobs.get(this.activeJobId);
    return record && record.status !== "failed" && TERMINAL.has(record.status)
      ? this.activeJobId
      : null;
  }

  /** Refresh every unfinished job; called from the 1 s polling loop. */
  async poll(): Promise<void> {
    for (const [jobId, record] of this.jobs) {
      if (TERMINAL.has(record.status)) continue;
      const fresh = await this.guard(() => this.api.getJob(jobId));
      this.jobs.set(jobId, fresh);
      if (fresh.status === "converged" || fresh.status === "budget-exhausted") {
        this.activeJobId = jobId;
      }
    }
  }

  async pollUntilDone(jobId: string, intervalMs = 1000, timeoutMs = 300000): Promise<JobRecord> {
    const t0 = Date.now();
    for (;;) {
      await this.poll();
      const record = this.jobs.get(jobId);
      if (record && TERMINAL.has(record.status)) return record;
      if (Date.now() - t0 > timeoutMs) throw new Error(`job ${jobId} timed out`);
      await new Promise((r) => setTimeout(r, intervalMs));
    }
  }

  phiTrace(jobId: string): { iteration: number; phi: number }[] {
    const record = this.jobs.get(jobId);
    return (record?.trace ?? []).map((t) => ({
      iteration: t.iteration,
      phi: t.phi,
    }));
  }

  async browseCandidates(samples: number, seed = 0): Promise<GalleryEntry[]> {
    if (!this.modelId) throw new Error("upload a model first");
    const res = await this.guard(() =>
      this.api.suggest(this.modelId!, samples, seed),
    );
    this.suggestId = res.suggestId;
    this.gallery = res.candidates.map((candidate) => ({
      suggestId: res.suggestId,
      candidate,
      pinned: false,
    }));
    return this.gallery;
  }

  /** Pin one gallery card and fetch its grammar for download. */
  async selectCandidate(index: number): Promise<GrammarDownload> {
    const entry = this.gallery.find((e) => e.candidate.index === index);
    if (!entry) throw new Error(`no candidate ${index} in the gallery`);
    for (const e of this.gallery) e.pinned = e === entry;
    const text = await this.guard(() =>
      this.api.getText(entry.candidate.grammar),
    );
    return { filename: `candidate-${index}-grammar.json`, text };
  }

  pinnedCandidate(): GalleryEntry | null {
    return this.gallery.find((e) => e.pinned) ?? null;
  }
}
