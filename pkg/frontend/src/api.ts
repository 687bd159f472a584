// API client with a request-hash response cache (repeat submissions never hit
// the network) and a sequence number that discards stale responses when a
// newer search has been issued.

import type { EvalReport, GalleryResponse, SearchRequest } from "./types.js";

export type SearchOutcome =
  | { kind: "ok"; gallery: GalleryResponse; fromCache: boolean }
  | { kind: "stale" }
  | { kind: "error"; status: number; message: string; retryable: boolean };

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  networkCalls = 0;
  private cache = new Map<string, GalleryResponse>();
  private reportCache = new Map<string, EvalReport>();
  private seq = 0;

  constructor(
    private baseUrl: string = "",
    private fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  requestKey(request: SearchRequest): string {
    return JSON.stringify(request);
  }

  async search(request: SearchRequest): Promise<SearchOutcome> {
    const key = this.requestKey(request);
    const cached = this.cache.get(key);
    if (cached) {
      return { kind: "ok", gallery: cached, fromCache: true };
    }
    const mySeq = ++this.seq;
    this.networkCalls++;
    let response: Response;
    try {
      response = await this.fetchFn(`${this.baseUrl}/v1/search`, {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: key,
      });
    } catch (err) {
      if (mySeq !== this.seq) return { kind: "stale" };
      return { kind: "error", status: 0, message: String(err), retryable: true };
    }
    if (mySeq !== this.seq) return { kind: "stale" };
    if (!response.ok) {
      const message = await response.text();
      return {
        kind: "error",
        status: response.status,
        message,
        retryable: response.status >= 500,
      };
    }
    const gallery = (await response.json()) as GalleryResponse;
    if (mySeq !== this.seq) return { kind: "stale" };
    this.cache.set(key, gallery);
    return { kind: "ok", gallery, fromCache: false };
  }

  async report(runId: string): Promise<EvalReport | null> {
    const cached = this.reportCache.get(runId);
    if (cached) return cached;
    const response = await this.fetchFn(
      `${this.baseUrl}/v1/eval/report/${runId}?include=ratings`,
    );
    if (!response.ok) return null;
    const report = (await response.json()) as EvalReport;
    this.reportCache.set(runId, report);
    return report;
  }
}
