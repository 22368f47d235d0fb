import { describe, expect, it } from "vitest";

import { ApiClient, ApiError } from "../src/api.js";

function jsonResponse(body: unknown, status = 200): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}

describe("ApiClient", () => {
  it("fetches and parses config", async () => {
    const client = new ApiClient("http://svc", async (url) => {
      expect(url).toBe("http://svc/api/config");
      return jsonResponse({ values: ["alp"], epsilon: 0.05, budget: 200, parameters: [], bounds: {} });
    });
    const config = await client.getConfig();
    expect(config.epsilon).toBe(0.05);
  });

  it("posts job requests as JSON", async () => {
    let seen: unknown = null;
    const client = new ApiClient("", async (_url, init) => {
      seen = JSON.parse(String(init?.body));
      return jsonResponse({ jobId: "j1" });
    });
    const jobId = await client.createJob({ modelId: "m", target: { alp: 1 } });
    expect(jobId).toBe("j1");
    expect(seen).toEqual({ modelId: "m", target: { alp: 1 } });
  });

  it("uploads models as multipart form data", async () => {
    const client = new ApiClient("", async (_url, init) => {
      expect(init?.body).toBeInstanceOf(FormData);
      const file = (init!.body as FormData).get("file") as File;
      expect(file.name).toBe("grid.obj");
      return jsonResponse({ modelId: "abc" });
    });
    const id = await client.uploadModel("grid.obj", new Blob(["v 0 0 0\n"]));
    expect(id).toBe("abc");
  });

  it("surfaces the service error envelope", async () => {
    const client = new ApiClient("", async () =>
      jsonResponse({ error: { code: "invalid-target", message: "bad target" } }, 400),
    );
    const err = await client.getJob("x").catch((e) => e);
    expect(err).toBeInstanceOf(ApiError);
    expect(err.status).toBe(400);
    expect(err.code).toBe("invalid-target");
    expect(err.message).toBe("bad target");
  });

  it("maps network failures to a retriable status-0 error", async () => {
    const client = new ApiClient("", async () => {
      throw new TypeError("fetch failed");
    });
    const err = await client.getConfig().catch((e) => e);
    expect(err).toBeInstanceOf(ApiError);
    expect(err.status).toBe(0);
    expect(err.code).toBe("unreachable");
  });

  it("keeps the status line for non-JSON error bodies", async () => {
    const client = new ApiClient("", async () =>
      new Response("<html>boom</html>", { status: 502, statusText: "Bad Gateway" }),
    );
    const err = await client.getConfig().catch((e) => e);
    expect(err.code).toBe("http-error");
    expect(err.message).toContain("502");
  });

  it("returns artifact bodies as text", async () => {
    const client = new ApiClient("http://svc", async (url) => {
      expect(url).toBe("http://svc/api/suggest/s/0/preview");
      return new Response("usemtl label_0\n");
    });
    expect(await client.getText("/api/suggest/s/0/preview")).toContain("usemtl");
  });
});
