/** Typed client for the grammar-extraction job service.
 *
 * Every grammar statistic shown in the UI comes from these endpoints; the
 * client never derives values locally.
 */

export interface ServiceConfig {
  values: string[];
  epsilon: number;
  budget: number;
  parameters: string[];
  bounds: Record<string, [number, number]>;
}

export type Gamma = Record<string, number>;

export interface ModelInfo {
  modelId: string;
  kind: string;
  elements: number;
  gamma0: Gamma;
}

export type JobStatus =
  | "queued"
  | "running"
  | "converged"
  | "budget-exhausted"
  | "failed";

export interface TraceEntry {
  iteration: number;
  phi: number;
  [column: string]: number;
}

export interface JobRecord {
  id: string;
  modelId: string;
  target: Gamma;
  weights: Gamma;
  epsilon: number;
  budget: number;
  seed: number;
  warmFrom: string | null;
  status: JobStatus;
  phi?: number;
  gamma?: Gamma;
  evaluations?: number;
  trace?: TraceEntry[];
  error?: string;
}

export interface Candidate {
  index: number;
  target: Gamma;
  gamma: Gamma;
  phi: number;
  grammar: string;
  preview: string;
}

export interface SuggestResponse {
  suggestId: string;
  candidates: Candidate[];
}

export interface JobRequest {
  modelId: string;
  target: Gamma;
  weights?: Gamma;
  epsilon?: number;
  budget?: number;
  seed?: number;
  warmFrom?: string;
}

/** Service-reported failure; `code` matches the error envelope. */
export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    message: string,
  ) {
    super(message);
  }
}

type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchFn: FetchLike = (url, init) => fetch(url, init),
  ) {}

  private async request(path: string, init?: RequestInit): Promise<Response> {
    let res: Response;
    try {
      res = await this.fetchFn(this.baseUrl + path, init);
    } catch (err) {
      throw new ApiError(0, "unreachable", String(err));
    }
    if (!res.ok) {
      let code = "http-error";
      let message = `${res.status} ${res.statusText}`;
      try {
        const body = await res.json();
        if (body?.error) {
          code = body.error.code ?? code;
          message = body.error.message ?? message;
        }
      } catch {
        // non-JSON error body: keep the status line
      }
      throw new ApiError(res.status, code, message);
    }
    return res;
  }

  private async json<T>(path: string, init?: RequestInit): Promise<T> {
    return (await this.request(path, init)).json() as Promise<T>;
  }

  private post<T>(path: string, body: unknown): Promise<T> {
    return this.json<T>(path, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
  }

  getConfig(): Promise<ServiceConfig> {
    return this.json("/api/config");
  }

  async uploadModel(name: string, bytes: Blob): Promise<string> {
    const form = new FormData();
    form.append("file", bytes, name);
    const out = await this.json<{ modelId: string }>("/api/models", {
      method: "POST",
      body: form,
    });
    return out.modelId;
  }

  getModelInfo(modelId: string): Promise<ModelInfo> {
    return this.json(`/api/models/${modelId}`);
  }

  async createJob(req: JobRequest): Promise<string> {
    const out = await this.post<{ jobId: string }>("/api/jobs", req);
    return out.jobId;
  }

  getJob(jobId: string): Promise<JobRecord> {
    return this.json(`/api/jobs/${jobId}`);
  }

  async refineJob(jobId: string, req: Partial<JobRequest>): Promise<string> {
    const out = await this.post<{ jobId: string }>(
      `/api/jobs/${jobId}/refine`,
      req,
    );
    return out.jobId;
  }

  async getJobGrammar(jobId: string): Promise<string> {
    return (await this.request(`/api/jobs/${jobId}/grammar`)).text();
  }

  async getJobPreview(jobId: string): Promise<string> {
    return (await this.request(`/api/jobs/${jobId}/preview`)).text();
  }

  suggest(modelId: string, samples: number, seed = 0): Promise<SuggestResponse> {
    return this.post("/api/suggest", { modelId, samples, seed });
  }

  /** `path` is the server-relative artifact URL from a Candidate entry. */
  async getText(path: string): Promise<string> {
    return (await this.request(path)).text();
  }
}
