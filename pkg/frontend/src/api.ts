export interface QueryResult {
  motion_id: string;
  score: number;
  rank: number;
}

export interface QueryResponse {
  results: QueryResult[];
}

export interface MotionData {
  motion_id: string;
  fps: number;
  joints: number[][][]; // T x J x 3
}

export interface HealthInfo {
  status: string;
  index_size: number;
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ServiceError extends Error {
  constructor(message: string, readonly status?: number) {
    super(message);
    this.name = "ServiceError";
  }
}

async function errorDetail(response: Response): Promise<string> {
  try {
    const body = (await response.json()) as { detail?: string };
    if (body && typeof body.detail === "string") return body.detail;
  } catch {
    // non-JSON error body; fall through to the status line
  }
  return `HTTP ${response.status}`;
}

export class ServiceClient {
  constructor(
    readonly baseUrl: string = "",
    private readonly fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private url(path: string): string {
    return this.baseUrl.replace(/\/$/, "") + path;
  }

  private async request(path: string, init?: RequestInit): Promise<Response> {
    let response: Response;
    try {
      response = await this.fetchFn(this.url(path), init);
    } catch (err) {
      throw new ServiceError(`service unreachable: ${String(err)}`);
    }
    if (!response.ok) {
      throw new ServiceError(await errorDetail(response), response.status);
    }
    return response;
  }

  async query(text: string, k: number): Promise<QueryResult[]> {
    const response = await this.request("/query", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ text, k }),
    });
    const body = (await response.json()) as QueryResponse;
    return body.results;
  }

  async motion(motionId: string): Promise<MotionData> {
    const response = await this.request(`/motions/${encodeURIComponent(motionId)}`);
    return (await response.json()) as MotionData;
  }

  async health(): Promise<HealthInfo> {
    const response = await this.request("/health");
    return (await response.json()) as HealthInfo;
  }
}
