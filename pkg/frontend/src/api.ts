import type {
  Annotation,
  ExperimentSummary,
  MetricSeries,
  RunListing,
  RunRecord,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    public status: number,
    public code: string,
    public detail: string,
  ) {
    super(`${code}: ${detail}`);
  }
}

export interface RunQuery {
  where?: Record<string, unknown>;
  sort?: { path: string; direction: "asc" | "desc" } | null;
  skip?: number;
  limit?: number;
}

// Pure so the URL construction is testable without a server.
export function runsQueryString(query: RunQuery): string {
  const params = new URLSearchParams();
  if (query.where && Object.keys(query.where).length > 0) {
    params.set("filter", JSON.stringify(query.where));
  }
  if (query.sort) params.set("sort", `${query.sort.path}:${query.sort.direction}`);
  if (query.skip) params.set("skip", String(query.skip));
  if (query.limit !== undefined) params.set("limit", String(query.limit));
  const text = params.toString();
  return text ? `?${text}` : "";
}

// Artifact names are relative paths; keep the slashes as segment
// separators but escape everything else.
export function encodeArtifactPath(name: string): string {
  return name.split("/").map(encodeURIComponent).join("/");
}

export class ApiClient {
  constructor(
    private baseUrl = "",
    private token: string | null = null,
  ) {}

  private async request(path: string, init: RequestInit = {}): Promise<Response> {
    const headers = new Headers(init.headers);
    if (this.token) headers.set("Authorization", `Bearer ${this.token}`);
    const response = await fetch(this.baseUrl + path, { ...init, headers });
    if (!response.ok) {
      let code = `HTTP ${response.status}`;
      let detail = response.statusText;
      try {
        const body = await response.json();
        code = body.error ?? code;
        detail = body.detail ?? detail;
      } catch {
        // non-JSON error body; keep the HTTP status text
      }
      throw new ApiError(response.status, code, detail);
    }
    return response;
  }

  private async json<T>(path: string, init: RequestInit = {}): Promise<T> {
    const response = await this.request(path, init);
    return (await response.json()) as T;
  }

  queryRuns(query: RunQuery): Promise<RunListing> {
    return this.json(`/api/runs${runsQueryString(query)}`);
  }

  getRun(runId: number): Promise<RunRecord> {
    return this.json(`/api/runs/${runId}`);
  }

  getMetric(runId: number, name: string): Promise<MetricSeries> {
    return this.json(`/api/runs/${runId}/metrics/${encodeURIComponent(name)}`);
  }

  listExperiments(): Promise<ExperimentSummary[]> {
    return this.json("/api/experiments");
  }

  getAnnotations(runId: number): Promise<Annotation[]> {
    return this.json(`/api/runs/${runId}/annotations`);
  }

  postAnnotation(
    runId: number,
    body: { author: string; tags: string[]; note: string },
  ): Promise<Annotation> {
    return this.json(`/api/runs/${runId}/annotations`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
  }

  artifactUrl(runId: number, name: string): string {
    return `${this.baseUrl}/api/runs/${runId}/artifacts/${encodeArtifactPath(name)}`;
  }

  async downloadArtifact(runId: number, name: string): Promise<Blob> {
    const response = await this.request(
      `/api/runs/${runId}/artifacts/${encodeArtifactPath(name)}`,
    );
    return response.blob();
  }
}
