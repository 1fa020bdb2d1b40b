/** Thin fetch client for the inference service. At most one recommendation
 * request is in flight: a new submit aborts the previous one. */

import type {
  ApiErrorBody,
  ModelInfo,
  RecommendRequest,
  Recommendation,
  WhatIfRequest,
  WhatIfResponse,
} from "./types.js";

export class ServiceError extends Error {
  constructor(
    public readonly status: number,
    public readonly body: ApiErrorBody,
  ) {
    super(body.message);
    this.name = "ServiceError";
  }
}

async function parseError(response: Response): Promise<ApiErrorBody> {
  try {
    const body = (await response.json()) as ApiErrorBody;
    if (typeof body.message === "string") return body;
  } catch {
    // fall through to the generic shape
  }
  return { category: "internal", message: `service returned ${response.status}` };
}

export class ApiClient {
  private recommendController: AbortController | null = null;

  constructor(private readonly baseUrl: string = "") {}

  private async post<T>(path: string, body: unknown, signal?: AbortSignal): Promise<T> {
    const response = await fetch(this.baseUrl + path, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
      signal,
    });
    if (!response.ok) throw new ServiceError(response.status, await parseError(response));
    return (await response.json()) as T;
  }

  /** Supersedes any recommendation request still in flight. */
  async recommend(request: RecommendRequest): Promise<Recommendation> {
    this.recommendController?.abort();
    this.recommendController = new AbortController();
    return this.post<Recommendation>(
      "/api/recommend",
      request,
      this.recommendController.signal,
    );
  }

  async whatIf(request: WhatIfRequest): Promise<WhatIfResponse> {
    return this.post<WhatIfResponse>("/api/what-if", request);
  }

  async modelInfo(): Promise<ModelInfo> {
    const response = await fetch(this.baseUrl + "/api/model-info");
    if (!response.ok) throw new ServiceError(response.status, await parseError(response));
    return (await response.json()) as ModelInfo;
  }
}
