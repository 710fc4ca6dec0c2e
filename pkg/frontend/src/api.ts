import type {
  Factor,
  ModelInfo,
  RecommendationRequest,
  RecommendationResponse,
} from "./types";

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    message: string,
  ) {
    super(message);
  }
}

async function getJson<T>(url: string): Promise<T> {
  const res = await fetch(url);
  if (!res.ok) {
    throw new ApiError(res.status, `GET ${url} failed: ${res.status}`);
  }
  return (await res.json()) as T;
}

async function postJson<T>(url: string, body: unknown): Promise<T> {
  const res = await fetch(url, {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: JSON.stringify(body),
  });
  if (!res.ok) {
    let detail = String(res.status);
    try {
      const payload = (await res.json()) as { detail?: string };
      if (payload.detail) detail = `${res.status}: ${payload.detail}`;
    } catch {
      // keep the bare status
    }
    throw new ApiError(res.status, `POST ${url} failed: ${detail}`);
  }
  return (await res.json()) as T;
}

export class ApiClient {
  constructor(private readonly baseUrl: string) {}

  modelInfo(): Promise<ModelInfo> {
    return getJson(`${this.baseUrl}/model/info`);
  }

  factors(): Promise<Factor[]> {
    return getJson(`${this.baseUrl}/factors`);
  }

  async createSession(items: number[]): Promise<string> {
    const res = await postJson<{ session_id: string }>(
      `${this.baseUrl}/sessions`,
      { items },
    );
    return res.session_id;
  }

  recommendations(req: RecommendationRequest): Promise<RecommendationResponse> {
    return postJson(`${this.baseUrl}/recommendations`, req);
  }
}
