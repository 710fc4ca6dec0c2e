import { afterEach, describe, expect, it, vi } from "vitest";

import { ApiClient, ApiError } from "../src/api";

function mockFetch(status: number, body: unknown): void {
  vi.stubGlobal(
    "fetch",
    vi.fn(async () => ({
      ok: status >= 200 && status < 300,
      status,
      json: async () => body,
    })),
  );
}

afterEach(() => vi.unstubAllGlobals());

describe("ApiClient", () => {
  it("fetches model info", async () => {
    mockFetch(200, { n_items: 50, factors: ["a"] });
    const client = new ApiClient("http://x");
    const info = await client.modelInfo();
    expect(info.n_items).toBe(50);
    expect(fetch).toHaveBeenCalledWith("http://x/model/info");
  });

  it("posts recommendation requests as JSON", async () => {
    mockFetch(200, { items: [], counts: {}, digest: "d" });
    const client = new ApiClient("http://x");
    await client.recommendations({ items: [1, 2], knobs: { a: 0.9 }, n: 20 });
    const [url, init] = vi.mocked(fetch).mock.calls[0] as [string, RequestInit];
    expect(url).toBe("http://x/recommendations");
    expect(JSON.parse(init.body as string)).toEqual({
      items: [1, 2],
      knobs: { a: 0.9 },
      n: 20,
    });
  });

  it("unwraps session ids", async () => {
    mockFetch(200, { session_id: "abc" });
    const client = new ApiClient("http://x");
    expect(await client.createSession([1])).toBe("abc");
  });

  it("throws ApiError with the service detail on 400", async () => {
    mockFetch(400, { detail: "unknown factor 'Jazz'" });
    const client = new ApiClient("http://x");
    await expect(client.recommendations({ items: [1] })).rejects.toThrowError(
      ApiError,
    );
    await expect(client.recommendations({ items: [1] })).rejects.toThrow(
      /unknown factor/,
    );
  });

  it("throws on network-level failure", async () => {
    vi.stubGlobal("fetch", vi.fn(async () => {
      throw new TypeError("network down");
    }));
    const client = new ApiClient("http://x");
    await expect(client.factors()).rejects.toThrow(/network down/);
  });
});
